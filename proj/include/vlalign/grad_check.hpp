#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vlalign/adam.hpp"
#include "vlalign/ops.hpp"
#include "vlalign/params.hpp"

namespace vlalign {

struct GradCheckEntry {
  std::string name;
  double max_error = 0.0;  // relative, with absolute fallback for ~0 pairs
  long coords_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double max_error = 0.0;

  bool passed(double tolerance) const { return max_error < tolerance; }
};

// Compares analytic gradients of a deterministic scalar-valued function
// against central finite differences. `fn` must rebuild the loss from the
// current parameter values on every call. When max_coords_per_param == 0
// every coordinate is checked, otherwise a seeded subset per parameter.
inline GradCheckReport grad_check(const std::function<Tensor()>& fn, ParamStore& params,
                                  double h = 1e-5, int max_coords_per_param = 0,
                                  uint64_t sample_seed = 17) {
  params.zero_grads();
  std::vector<std::vector<double>> analytic(params.count());
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = fn();
    check(loss.is_scalar(), "grad_check: function must be scalar-valued");
    tape.backward(loss);
  }
  for (size_t p = 0; p < params.count(); ++p) analytic[p] = params.tensor(p).grad();

  GradCheckReport report;
  Rng rng(sample_seed);
  for (size_t p = 0; p < params.count(); ++p) {
    Tensor t = params.tensor(p);
    const long n = t.size();
    std::vector<long> coords;
    if (max_coords_per_param <= 0 || n <= max_coords_per_param) {
      coords.resize(static_cast<size_t>(n));
      for (long i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      for (int i = 0; i < max_coords_per_param; ++i)
        coords.push_back(rng.uniform_int(static_cast<int>(n)));
    }
    GradCheckEntry entry;
    entry.name = params.names()[p];
    for (long c : coords) {
      double* w = t.raw();
      const double saved = w[c];
      w[c] = saved + h;
      const double fp = fn().value();
      w[c] = saved - h;
      const double fm = fn().value();
      w[c] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[p][static_cast<size_t>(c)];
      const double denom = std::max(std::abs(a), std::abs(numeric));
      const double err = denom < 1e-8 ? std::abs(a - numeric) : std::abs(a - numeric) / denom;
      entry.max_error = std::max(entry.max_error, err);
      ++entry.coords_checked;
    }
    report.max_error = std::max(report.max_error, entry.max_error);
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace vlalign
