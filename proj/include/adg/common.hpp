#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace adg {

using Complex = std::complex<double>;

/// Input or validation problem: bad files, inconsistent data, schema errors.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

/// Model-level problem detected while assembling or running a study
/// (e.g. a tightening that leaves no feasible band).
class ModelError : public std::runtime_error {
public:
    explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace adg
