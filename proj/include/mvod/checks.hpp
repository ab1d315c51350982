#pragma once

// Finite-difference gradient checks, scalar reference implementations and
// randomized property suites. Shared by the unit tests, the acceptance
// binary and `mvod selftest`.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mvod/aggregation.hpp"
#include "mvod/detector.hpp"
#include "mvod/ops.hpp"
#include "mvod/tensor.hpp"

namespace mvod::checks {

// ---- finite differences -----------------------------------------------------

/// max |a - n| / max |n|  (absolute error when n is identically zero).
double relative_error(const TensorD& analytic, const TensorD& numeric);

/// Central differences of a scalar function, one element at a time.
TensorD numeric_gradient(const std::function<double(const TensorD&)>& f, const TensorD& x,
                         double eps = 1e-6);

struct GradStats {
  std::string op;
  int instances = 0;
  double max_rel_error = 0.0;
  std::string worst;  // which gradient produced max_rel_error
};

GradStats grad_check_conv2d(int instances, std::uint64_t seed);
GradStats grad_check_depthwise_separable(int instances, std::uint64_t seed);
GradStats grad_check_warp_feature(int instances, std::uint64_t seed);
GradStats grad_check_warp_flow(int instances, std::uint64_t seed);
GradStats grad_check_gru(int instances, std::uint64_t seed);
GradStats grad_check_epe(int instances, std::uint64_t seed);

// ---- scalar references --------------------------------------------------------

TensorD ref_conv2d(const TensorD& input, const TensorD& weights, const std::vector<double>& bias,
                   ConvGeometry g);
/// out(p) = bilinear sample at p + flow(p); taps outside the grid read zero.
TensorD ref_warp(const TensorD& feature, const TensorD& flow);
TensorD ref_gru(const TensorD& f_cur, const TensorD& f_prev, const TensorD& flow,
                const GruParams<double>& p);
TensorD ref_psroi(const TensorD& maps, const std::vector<Box>& rois, double image_w,
                  double image_h, int bins, int samples, int stride);
double ref_iou(const Box& a, const Box& b);
/// Repeatedly takes the best remaining box (lowest index on ties) and drops
/// every remaining box overlapping it by more than `thresh`.
std::vector<int> ref_nms(const std::vector<Box>& boxes, const std::vector<float>& scores,
                         double thresh);

// ---- property suites --------------------------------------------------------------

struct PropertyStats {
  std::string name;
  int instances = 0;
  int failures = 0;
  double max_error = 0.0;
  std::string first_failure;
  bool passed() const { return instances > 0 && failures == 0; }
};

PropertyStats warp_zero_flow_identity(int instances, std::uint64_t seed);
PropertyStats warp_integer_shift(int instances, std::uint64_t seed);
/// Gates inside [0, 1] and every output element between the warped state
/// and the candidate.
PropertyStats gru_gate_and_convexity(int instances, std::uint64_t seed);

PropertyStats nms_matches_reference(int trials, int max_boxes, std::uint64_t seed);
/// max_error = largest absolute deviation from the scalar reference.
PropertyStats psroi_matches_reference(int instances, std::uint64_t seed, double tol = 1e-10);
PropertyStats gru_matches_reference(int instances, std::uint64_t seed, double tol = 1e-10);

struct MacCheck {
  std::string network;
  std::uint64_t executed = 0;  // counted inside the conv kernel
  std::uint64_t analyzed = 0;  // analyzer conv FLOPs / 2
  bool passed() const { return executed == analyzed && executed > 0; }
};

MacCheck mac_check_light_flow(double beta, int height, int width, std::uint64_t seed);
MacCheck mac_check_backbone(double alpha, int height, int width, std::uint64_t seed);
MacCheck mac_check_gru(int feature_width, int gru_width, int height, int width, std::uint64_t seed);

// ---- suite driver ------------------------------------------------------------------

struct SuiteLine {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Gradient checks (`instances` each), invariants, oracles and MAC checks.
std::vector<SuiteLine> run_selftest(int instances, std::uint64_t seed);
void print_suite(std::ostream& os, const std::vector<SuiteLine>& lines);

}  // namespace mvod::checks
