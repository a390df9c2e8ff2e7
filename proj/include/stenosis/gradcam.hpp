// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stenosis/image.hpp"
#include "stenosis/toynet.hpp"

namespace stenosis::nn {

struct CamMap {
  ImageF heat;  // nonnegative, max 1 unless identically zero
  int class_id = 0;
};

/// Class-activation map at the C5 output for one frame, upsampled to the
/// frame size. Parameter gradients are left untouched.
CamMap grad_cam(ToyNet& net, const ImageF& image, int class_id);

/// Same map from precomputed C5 activations and gradients (one sample).
CamMap cam_from_activations(const Tensor& activations, const Tensor& gradients, std::size_t out_w,
                            std::size_t out_h, int class_id);

/// Jet-like color overlay of `cam` on a gray frame, `alpha` in [0, 1].
ImageRgb overlay_cam(const ImageU8& frame, const CamMap& cam, double alpha = 0.45);

}  // namespace stenosis::nn
