// SPDX-License-Identifier: Apache-2.0
#include "stenosis/gradcam.hpp"

#include <algorithm>
#include <cmath>

#include "stenosis/errors.hpp"

namespace stenosis::nn {

CamMap cam_from_activations(const Tensor& act, const Tensor& grad, std::size_t out_w, std::size_t out_h,
                            int class_id) {
  if (!act.same_shape(grad) || act.n != 1) throw ValidationError("grad_cam: activation/gradient mismatch");
  if (out_w == 0 || out_h == 0) throw ValidationError("grad_cam: empty output size");
  const std::size_t hw = act.plane();
  std::vector<double> low(hw, 0.0);
  for (std::size_t c = 0; c < act.c; ++c) {
    double alpha = 0.0;
    for (std::size_t k = 0; k < hw; ++k) alpha += grad.data[c * hw + k];
    alpha /= static_cast<double>(hw);
    if (alpha == 0.0) continue;
    for (std::size_t k = 0; k < hw; ++k) low[k] += alpha * act.data[c * hw + k];
  }
  for (double& v : low) v = std::max(0.0, v);

  // bilinear, pixel centers aligned
  CamMap cam;
  cam.class_id = class_id;
  cam.heat = ImageF(out_w, out_h);
  const double sx = static_cast<double>(act.w) / static_cast<double>(out_w);
  const double sy = static_cast<double>(act.h) / static_cast<double>(out_h);
  const auto sample = [&](std::size_t y, std::size_t x) { return low[y * act.w + x]; };
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(act.h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, act.h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx =
          std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(act.w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, act.w - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = sample(y0, x0) * (1 - tx) + sample(y0, x1) * tx;
      const double bot = sample(y1, x0) * (1 - tx) + sample(y1, x1) * tx;
      cam.heat.at(x, y) = top * (1 - ty) + bot * ty;
    }
  }
  const double peak = *std::max_element(cam.heat.pixels.begin(), cam.heat.pixels.end());
  if (peak > 0.0) {
    for (double& v : cam.heat.pixels) v /= peak;
  }
  return cam;
}

CamMap grad_cam(ToyNet& net, const ImageF& image, int class_id) {
  if (net.config().kind != NetKind::classifier) throw ValidationError("grad_cam: not a classifier");
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= net.config().num_classes) {
    throw ValidationError("grad_cam: class id out of range");
  }
  const auto cache = net.forward(to_tensor({&image}));
  Tensor d_logits(1, net.config().num_classes, 1, 1);
  d_logits.at(0, static_cast<std::size_t>(class_id), 0, 0) = 1.0;
  const Tensor d_c5 = net.backward_classifier(cache, d_logits, {.param_grads = false});
  return cam_from_activations(cache.blocks[4], d_c5, image.width, image.height, class_id);
}

ImageRgb overlay_cam(const ImageU8& frame, const CamMap& cam, double alpha) {
  if (frame.width != cam.heat.width || frame.height != cam.heat.height) {
    throw ValidationError("overlay_cam: size mismatch");
  }
  alpha = std::clamp(alpha, 0.0, 1.0);
  ImageRgb out{frame.width, frame.height, std::vector<std::uint8_t>(frame.pixels.size() * 3)};
  for (std::size_t i = 0; i < frame.pixels.size(); ++i) {
    const double v = std::clamp(cam.heat.pixels[i], 0.0, 1.0);
    const double r = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
    const double g = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
    const double b = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
    const double gray = frame.pixels[i];
    const double rgb[3] = {r, g, b};
    for (int c = 0; c < 3; ++c) {
      const double mixed = (1.0 - alpha) * gray + alpha * 255.0 * rgb[c];
      out.pixels[i * 3 + static_cast<std::size_t>(c)] =
          static_cast<std::uint8_t>(std::lround(std::clamp(mixed, 0.0, 255.0)));
    }
  }
  return out;
}

}  // namespace stenosis::nn
