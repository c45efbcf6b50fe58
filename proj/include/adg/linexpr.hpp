#pragma once

#include <Eigen/Dense>
#include <complex>
#include <utility>
#include <vector>

namespace adg {

/// Affine expression over decision variables: sum of coef*var plus a constant.
/// Terms may repeat; they are merged when a program is compiled.
class LinExpr {
public:
    LinExpr() = default;
    /* implicit */ LinExpr(double constant) : constant_(constant) {}

    static LinExpr var(int index, double coef = 1.0) {
        LinExpr e;
        e.terms_.emplace_back(index, coef);
        return e;
    }

    LinExpr& operator+=(const LinExpr& o) {
        terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
        constant_ += o.constant_;
        return *this;
    }
    LinExpr& operator-=(const LinExpr& o) {
        for (const auto& [v, c] : o.terms_) terms_.emplace_back(v, -c);
        constant_ -= o.constant_;
        return *this;
    }
    LinExpr& operator*=(double k) {
        for (auto& [v, c] : terms_) c *= k;
        constant_ *= k;
        return *this;
    }
    friend LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
    friend LinExpr operator-(LinExpr a, const LinExpr& b) { return a -= b; }
    friend LinExpr operator*(LinExpr a, double k) { return a *= k; }
    friend LinExpr operator*(double k, LinExpr a) { return a *= k; }
    friend LinExpr operator-(LinExpr a) { return a *= -1.0; }

    void add(int var, double coef) { terms_.emplace_back(var, coef); }

    double constant() const { return constant_; }
    const std::vector<std::pair<int, double>>& terms() const { return terms_; }
    bool is_constant() const { return terms_.empty(); }

    double value(const Eigen::VectorXd& x) const {
        double v = constant_;
        for (const auto& [i, c] : terms_) v += c * x[i];
        return v;
    }

private:
    std::vector<std::pair<int, double>> terms_;
    double constant_ = 0.0;
};

/// Complex-valued affine expression (real and imaginary parts).
struct ComplexExpr {
    LinExpr re, im;

    ComplexExpr() = default;
    ComplexExpr(LinExpr r, LinExpr i) : re(std::move(r)), im(std::move(i)) {}
    /* implicit */ ComplexExpr(std::complex<double> c) : re(c.real()), im(c.imag()) {}

    ComplexExpr& operator+=(const ComplexExpr& o) {
        re += o.re;
        im += o.im;
        return *this;
    }
    friend ComplexExpr operator+(ComplexExpr a, const ComplexExpr& b) { return a += b; }

    /// Multiply by a complex constant.
    friend ComplexExpr operator*(const std::complex<double>& k, const ComplexExpr& e) {
        ComplexExpr r;
        r.re = e.re * k.real() - e.im * k.imag();
        r.im = e.re * k.imag() + e.im * k.real();
        return r;
    }

    std::complex<double> value(const Eigen::VectorXd& x) const {
        return {re.value(x), im.value(x)};
    }
};

}  // namespace adg
