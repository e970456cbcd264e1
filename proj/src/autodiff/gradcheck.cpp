#include "sfae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace sfae::ad {

namespace {

class DebugChecks {
 public:
  DebugChecks() : previous_(debug_checks()) { set_debug_checks(true); }
  ~DebugChecks() { set_debug_checks(previous_); }
  DebugChecks(const DebugChecks&) = delete;
  DebugChecks& operator=(const DebugChecks&) = delete;

 private:
  bool previous_;
};

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  NoGradScope no_grad;
  const Tensor y = f(inputs);
  if (y.numel() != 1) throw ShapeError("gradcheck function must return a scalar, got " + to_string(y.shape()));
  const double v = y.item();
  if (!std::isfinite(v)) throw NonFiniteError("loss", "function value is non-finite");
  return v;
}

std::vector<std::size_t> pick_entries(std::size_t n, const GradcheckOptions& opt, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (opt.max_entries_per_input == 0 || opt.max_entries_per_input >= n) return idx;
  // Partial Fisher-Yates with a portable index draw.
  for (std::size_t i = 0; i < opt.max_entries_per_input; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(opt.max_entries_per_input);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradcheckReport gradcheck(const std::string& name, const ScalarFn& f, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& opt) {
  GradcheckReport report;
  report.name = name;
  DebugChecks debug;

  std::vector<Tensor> args = inputs;
  for (auto& t : args) t.zero_grad();

  try {
    Tape tape;
    {
      TapeScope scope(tape);
      const Tensor loss = f(args);
      if (loss.numel() != 1) {
        throw ShapeError("gradcheck function must return a scalar, got " + to_string(loss.shape()));
      }
      if (!loss.requires_grad()) {
        report.diagnostic = "loss does not depend on any input that requires grad";
        return report;
      }
      tape.backward(loss);
    }

    std::mt19937_64 rng(opt.seed);
    const double h = opt.step;
    const double f0 = evaluate(f, args);
    for (std::size_t k = 0; k < args.size(); ++k) {
      Tensor& t = args[k];
      if (!t.requires_grad()) continue;
      std::vector<double> analytic(t.numel(), 0.0);
      if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        if (!std::isfinite(analytic[i])) {
          report.diagnostic = "non-finite analytic gradient for input " + std::to_string(k) + " at " +
                              std::to_string(i);
          return report;
        }
      }
      for (std::size_t i : pick_entries(t.numel(), opt, rng)) {
        auto data = t.mutable_data();
        const double x0 = data[i];
        data[i] = x0 + h;
        const double fp = evaluate(f, args);
        data[i] = x0 - h;
        const double fm = evaluate(f, args);
        data[i] = x0;

        const double fwd = (fp - f0) / h;
        const double bwd = (f0 - fm) / h;
        const double slope_scale = std::max({1.0, std::fabs(fwd), std::fabs(bwd)});
        if (std::fabs(fwd - bwd) > opt.kink_threshold * slope_scale) {
          report.excluded.push_back({k, i});
          continue;
        }
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[i];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), opt.denominator_floor});
        const double rel = std::fabs(a - numeric) / denom;
        ++report.checked;
        if (rel > report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_input = k;
          report.worst_index = i;
        }
      }
    }
  } catch (const NonFiniteError& e) {
    report.diagnostic = std::string("non-finite value in op '") + e.op() + "': " + e.what();
    return report;
  }
  report.passed = report.max_rel_error < opt.tolerance;
  if (!report.passed) {
    std::ostringstream os;
    os << "max relative error " << report.max_rel_error << " at input " << report.worst_input << " index "
       << report.worst_index << " exceeds " << opt.tolerance;
    report.diagnostic = os.str();
  }
  return report;
}

std::string format_report(const GradcheckReport& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS " : "FAIL ") << r.name << "  max_rel_err=" << r.max_rel_error << "  checked=" << r.checked
     << "  excluded=" << r.excluded.size();
  if (!r.diagnostic.empty()) os << "  (" << r.diagnostic << ")";
  return os.str();
}

}  // namespace sfae::ad
