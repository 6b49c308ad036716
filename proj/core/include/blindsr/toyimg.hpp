#pragma once

#include "blindsr/rng.hpp"
#include "blindsr/tensor.hpp"

namespace blindsr {

// Procedural textured test images in [0,1]: sinusoidal gratings, Gaussian
// blobs and a step edge, with mild per-channel tinting. Enough structure
// that blur width is observable in the degraded image.
Tensor toy_texture_image(int channels, int h, int w, Rng& rng);

}  // namespace blindsr
