#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "adg/conic_program.hpp"

namespace adg {

enum class SolveStatus {
    optimal,
    primal_infeasible,
    dual_infeasible,  // primal unbounded
    iteration_limit,
    numerical_error,
};

const char* status_name(SolveStatus s);

struct SolverSettings {
    double feastol = 1e-8;
    double abstol = 1e-8;
    double reltol = 1e-8;
    double feastol_inacc = 1e-4;
    double abstol_inacc = 5e-5;
    double reltol_inacc = 5e-5;
    int max_iter = 100;
    int refine_steps = 2;
    double delta_static = 7e-8;
    bool equilibrate = true;
    bool verbose = false;
};

struct SolverStats {
    int iterations = 0;
    double seconds = 0.0;
    bool inaccurate = false;  // converged only to reduced tolerances
    double pres = 0.0, dres = 0.0, gap = 0.0;
};

struct Solution {
    SolveStatus status = SolveStatus::numerical_error;
    Eigen::VectorXd x;  // primal values (certificate of unboundedness if dual_infeasible)
    Eigen::VectorXd y;  // equality duals (part of infeasibility certificate)
    Eigen::VectorXd z;  // cone duals
    Eigen::VectorXd s;  // cone slacks
    double objective = 0.0;
    SolverStats stats;

    bool ok() const { return status == SolveStatus::optimal; }
};

/// Abstract solver surface: linear + second-order-cone programs, with
/// binary variables supported by wrappers that subdivide the problem.
class SolverInterface {
public:
    struct Capabilities {
        bool linear = false;
        bool convex_quadratic = false;  // via SOC reformulation
        bool second_order_cone = false;
        bool binary = false;
    };

    virtual ~SolverInterface() = default;
    virtual Capabilities capabilities() const = 0;
    virtual Solution solve(const CompiledProblem& p) = 0;
};

/// Primal-dual interior-point method for SOCPs on the homogeneous
/// self-dual embedding, with Nesterov-Todd scalings and a Mehrotra
/// predictor-corrector. Sparse KKT systems are factored with a
/// regularized LDL^T and corrected by iterative refinement.
class SocpSolver : public SolverInterface {
public:
    SocpSolver() = default;
    explicit SocpSolver(SolverSettings s) : settings_(s) {}

    Capabilities capabilities() const override {
        return {true, true, true, false};
    }
    Solution solve(const CompiledProblem& p) override;

    SolverSettings& settings() { return settings_; }

private:
    SolverSettings settings_;
};

}  // namespace adg
