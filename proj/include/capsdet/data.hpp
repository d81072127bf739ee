#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capsdet/tensor.hpp"

namespace capsdet {

struct Dataset {
    Tensor images;  // [n,h,w,c], values in [0,1]
    std::vector<int> labels;
    std::string split;
    int classes = 0;

    int size() const { return images.rank() == 4 ? images.shape()[0] : 0; }
};

// MNIST-style IDX pair: big-endian headers, magic 0x803 for images and 0x801
// for labels. Pixels come back as [n,h,w,1] divided by 255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: 3073-byte records (label + planar RGB), converted
// to interleaved [n,32,32,3].
Dataset load_cifar_binary(const std::vector<std::string>& batch_paths);

// Flat container for datasets converted offline (SVHN, smallNORB):
// magic "CAPSDAT1", u32 little-endian n,h,w,c, u8 labels[n], u8 pixels.
Dataset load_u8_container(const std::string& path);
void save_u8_container(const Dataset& ds, const std::string& path);

// Deterministic synthetic digit corpus: per class a fixed stroke glyph,
// rendered with seeded jitter (rotation, scale, shift, thickness, noise) and
// quantized to the u8 grid. Labels cycle 0..classes-1. Stands in for image
// downloads in tests and desk-scale runs.
Dataset make_stroke_digits(int n, int side, int classes, uint64_t seed,
                           const std::string& split = "synthetic");

// Contiguous [start, start+count) view copied out of a dataset.
Dataset slice_dataset(const Dataset& ds, int start, int count);

}  // namespace capsdet
