// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <complex>
#include <memory>
#include <span>
#include <vector>

#include "stenosis/fft.hpp"
#include "stenosis/geometry.hpp"
#include "stenosis/image.hpp"

namespace stenosis::track {

struct TrackerParams {
  double padding = 2.5;             // search window side / box side
  double learn_rate = 0.02;
  double reg = 0.01;                // ridge term of the filter solve
  double psr_threshold = 5.0;
  double target_sigma_factor = 0.05;  // gaussian target sigma / sqrt(w h)
  double mask_sigma_factor = 0.6;   // spatial reliability sigma / box side
  bool spatial_mask = true;
  int psr_exclusion = 11;           // side of the peak neighborhood left out of the sidelobe
  double psr_region = 0.5;          // sidelobe taken over displacements within this fraction of the window
};

struct TrackResult {
  geom::Box box;
  double psr = 0.0;
  bool flagged = false;
  bool clipped = false;  // search window left the frame or the box had to be clamped
};

/// Correlation response over the search window, shifted so that zero
/// displacement sits at (center_x, center_y).
struct ResponseMap {
  ImageF map;
  std::size_t center_x = 0, center_y = 0;
  double peak_dx = 0.0, peak_dy = 0.0;  // sub-pixel displacement of the peak
  double psr = 0.0;
  bool window_clipped = false;          // search window extended past the frame
};

inline constexpr std::size_t kChannels = 3;  // intensity, |d/dx|, |d/dy|

/// Per-box filter state. Movable, not copyable (owns FFT plans and scratch).
class TrackState {
 public:
  using cpx = std::complex<double>;

  const geom::Box& box() const noexcept { return box_; }
  const TrackerParams& params() const noexcept { return params_; }
  std::size_t window_w() const noexcept { return win_w_; }
  std::size_t window_h() const noexcept { return win_h_; }
  std::span<const double> channel_weights() const noexcept { return weights_; }
  std::span<const cpx> filter(std::size_t channel) const { return filters_.at(channel); }

  /// Response of the current filter to `frame` around (cx, cy). The peak offset
  /// is measured from where the filter peaks on its own latest training window.
  ResponseMap correlate(const ImageU8& frame, double cx, double cy);

 private:
  friend TrackState init_track(const ImageU8&, const geom::Box&, const TrackerParams&);
  friend TrackResult update_track(TrackState&, const ImageU8&);

  TrackState() = default;

  struct Fit {
    std::array<std::vector<cpx>, kChannels> filters;
    std::array<double, kChannels> weights{};
  };
  Fit train(const ImageU8& frame, double cx, double cy);
  bool features(const ImageU8& frame, double cx, double cy,
                std::array<std::vector<cpx>, kChannels>& spectra);
  void calibrate(const ImageU8& frame, double cx, double cy);

  geom::Box box_{0, 0, 1, 1};
  TrackerParams params_;
  std::size_t win_w_ = 0, win_h_ = 0;
  std::vector<double> cosine_;
  std::vector<double> mask_;
  std::vector<cpx> target_;  // spectrum of the gaussian target, peak at the origin
  std::array<std::vector<cpx>, kChannels> filters_;
  std::array<double, kChannels> weights_{};
  double bias_x_ = 0.0, bias_y_ = 0.0;  // self-response peak, nonzero under the spatial mask
  std::unique_ptr<Fft2d> fft_;
  std::vector<cpx> scratch_a_, scratch_b_;
};

/// Throws ValidationError when the box is not inside the frame.
TrackState init_track(const ImageU8& frame, const geom::Box& box, const TrackerParams& params = {});

/// Locates the target in `frame`, moves the box by the response peak and, when
/// the result is not flagged, blends a freshly trained filter into the state.
/// flagged == (psr < psr_threshold || clipped).
TrackResult update_track(TrackState& state, const ImageU8& frame);

struct TrackedBox {
  geom::Box box;
  bool flagged = false;
  double psr = 0.0;
};

/// One independent track per reference box, run forward to the end and backward
/// to the start. The reference frame keeps its boxes verbatim and unflagged.
std::vector<std::vector<TrackedBox>> propagate(std::span<const ImageU8> frames, std::size_t ref_index,
                                               std::span<const geom::Box> ref_boxes,
                                               const TrackerParams& params = {});

}  // namespace stenosis::track
