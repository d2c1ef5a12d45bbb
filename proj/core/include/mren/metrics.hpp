#pragma once

#include "mren/image.hpp"

namespace mren::metrics {

// PSNR on the BT.601 Y channel after shaving a `scale`-pixel border;
// 10*log10(255^2 / MSE), capped at 100 dB (identical inputs hit the cap
// exactly). Images must leave at least one pixel after the shave.
double psnr_y(const image::ImageRGB& sr, const image::ImageRGB& hr, int scale);

// Same measure on luma planes directly. 8-bit RGB quantizes luma deltas to
// multiples of 219/255000, so reference cases stated on Y values (a plane
// offset by exactly 1, say) are only constructible here.
double psnr_y(const image::YPlane& sr, const image::YPlane& hr, int shave);

// Mean local SSIM on the shaved Y planes: 11x11 Gaussian window with
// sigma 1.5, K1 = 0.01, K2 = 0.03, L = 255, valid-region windows only.
// Identical inputs give exactly 1.0.
double ssim_y(const image::ImageRGB& sr, const image::ImageRGB& hr, int scale);

} // namespace mren::metrics
