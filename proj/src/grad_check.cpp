#include "clipvos/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace clipvos {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor<double>>& inputs) {
  NoGradScope no_grad;
  const double v = f(inputs).item();
  if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite loss " + std::to_string(v));
  return v;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.tol = options.tol;
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    GradTape tape;
    TapeScope scope(tape);
    Tensor<double> loss = f(inputs);
    if (loss.numel() != 1) throw ShapeError("grad_check: f must return a scalar, got " + shape_str(loss.shape()));
    if (!std::isfinite(loss.item())) {
      throw NonFiniteError("grad_check: non-finite loss " + std::to_string(loss.item()));
    }
    tape.backward(loss);
  }

  const double center = options.skip_kinks ? evaluate(f, inputs) : 0.0;
  std::mt19937_64 rng(options.seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor<double>& x = inputs[i];
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    std::vector<std::size_t> entries(x.numel());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries_per_input > 0 && entries.size() > options.max_entries_per_input) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_input);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t j : entries) {
      double& slot = x.mutable_data()[j];
      const double saved = slot;
      slot = saved + options.eps;
      const double up = evaluate(f, inputs);
      slot = saved - options.eps;
      const double down = evaluate(f, inputs);
      slot = saved;
      const double numeric = (up - down) / (2 * options.eps);
      const double abs_err = std::abs(analytic[j] - numeric);
      const double denom =
          std::max({std::abs(analytic[j]), std::abs(numeric), options.denom_floor});
      const double rel = abs_err / denom;
      if (options.skip_kinks && rel > options.tol) {
        const double one_sided = std::min(std::abs(analytic[j] - (up - center) / options.eps),
                                          std::abs(analytic[j] - (center - down) / options.eps));
        if (one_sided <= options.kink_ratio * options.tol * denom) {
          ++report.entries_skipped;
          continue;
        }
      }
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || report.entries_checked == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        std::ostringstream os;
        os << "input " << i << ", entry " << j << ": analytic " << analytic[j] << " vs numeric "
           << numeric;
        report.worst = os.str();
      }
      ++report.entries_checked;
    }
    x.zero_grad();
  }
  const std::size_t seen = report.entries_checked + report.entries_skipped;
  report.passed = report.max_rel_error <= options.tol &&
                  static_cast<double>(report.entries_skipped) <= options.max_skip_fraction * static_cast<double>(seen);
  return report;
}

}  // namespace clipvos
