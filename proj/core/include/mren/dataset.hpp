#pragma once

#include <string>
#include <vector>

#include "mren/image.hpp"
#include "mren/rng.hpp"
#include "mren/tensor.hpp"

namespace mren::data {

struct NamedImage {
    std::string name; // file name without directory
    image::ImageRGB img;
};

// HR patches with their bicubic-degraded LR counterparts, values in [0,1].
struct PatchBatch {
    Tensor4f lr;
    Tensor4f hr;
};

// Sorted .png paths in dir; missing directory raises IoError.
std::vector<std::string> list_images(const std::string& dir);

// Loads every listed image; empty directory raises IoError.
std::vector<NamedImage> load_images(const std::string& dir);

// Uniform random image and offset per sample; the LR patch is the degraded
// HR patch. Images smaller than the patch are skipped with a warning; if
// nothing remains, raises IoError. Deterministic given the rng state.
PatchBatch sample_patches(const std::vector<NamedImage>& images, int scale, int patch, int batch,
                          Rng& rng);

// Per sample: horizontal flip, vertical flip, 90-degree rotation, each with
// probability 0.5, same transform on LR and HR. Rotation needs square
// patches.
void augment(PatchBatch& batch, Rng& rng);

// Deterministic procedural texture: sharpened oriented waves, full range.
image::ImageRGB synth_texture(int width, int height, std::uint64_t seed);

} // namespace mren::data
