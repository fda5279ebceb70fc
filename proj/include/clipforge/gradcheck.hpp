#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "clipforge/any_layer.hpp"
#include "clipforge/tensor.hpp"

namespace clipforge {

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass = false;
  double tolerance = 0.0;
};

// Relative error between an analytic and a central-difference derivative.
// Both being tiny counts as agreement (the absolute gap is below the FD
// noise floor); otherwise normalize by the larger magnitude.
inline double grad_rel_err(double analytic, double numeric) {
  const double diff = std::fabs(analytic - numeric);
  if (diff < 1e-9) return 0.0;
  return diff / std::max(std::fabs(analytic), std::fabs(numeric));
}

// Central finite differences over every entry of every referenced tensor.
// `loss` must evaluate the scalar objective from the tensors' CURRENT values;
// `analytic` holds dLoss/dParam aligned with `params`. 64-bit arithmetic and
// h = 1e-5 per the checker's contract.
inline GradCheckReport gradcheck(const std::vector<ParamRef>& params,
                                 const std::vector<Tensor>& analytic,
                                 const std::function<double()>& loss, double h = 1e-5,
                                 double tolerance = 1e-4) {
  require(params.size() == analytic.size(), "gradcheck: params/analytic size mismatch");
  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].tensor;
    require(t.shape == analytic[p].shape,
            strformat("gradcheck: analytic gradient shape mismatch for %s", params[p].name.c_str()));
    GradCheckEntry entry;
    entry.param = params[p].name;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + h;
      const double up = loss();
      t.data[i] = saved - h;
      const double down = loss();
      t.data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      entry.max_rel_err = std::max(entry.max_rel_err, grad_rel_err(analytic[p].data[i], numeric));
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

// Convenience wrapper for a Sequential pipeline terminated by a scalar loss
// over the network output. Checks every parameter and the network input.
inline GradCheckReport gradcheck_network(Sequential& net, const Tensor& input,
                                         const std::function<double(const Tensor&)>& loss_fn,
                                         const std::function<Tensor(const Tensor&)>& loss_grad,
                                         double h = 1e-5, double tolerance = 1e-4) {
  // Analytic gradients via the backward chain.
  std::vector<Tensor> acts = net.forward_all(input);
  Tensor up = loss_grad(acts.back());
  std::vector<std::vector<Tensor>> param_grads;
  Tensor input_grad = net.backward(acts, up, &param_grads);

  std::vector<ParamRef> refs = net.params();
  std::vector<Tensor> analytic;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    for (Tensor& t : param_grads[i]) analytic.push_back(std::move(t));
  }

  Tensor input_copy = input;
  std::vector<ParamRef> all_refs = refs;
  all_refs.push_back({"input", &input_copy});
  std::vector<Tensor> all_analytic = std::move(analytic);
  all_analytic.push_back(std::move(input_grad));

  auto loss = [&]() { return loss_fn(net.forward(input_copy)); };
  return gradcheck(all_refs, all_analytic, loss, h, tolerance);
}

}  // namespace clipforge
