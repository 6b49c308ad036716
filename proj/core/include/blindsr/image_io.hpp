#pragma once

#include <string>
#include <vector>

#include "blindsr/tensor.hpp"

namespace blindsr {

// 8-bit RGB PNG in/out. Loading maps u8 values to [0,1] (v/255); saving
// clips to [0,1] and rounds — the only place intensities are ever clipped.
Tensor load_png(const std::string& path);          // [3,h,w]
void save_png(const std::string& path, const Tensor& img);

struct ManifestEntry {
  std::string hr_path;
  std::string kernel_path;
  int scale = 1;
  double noise_sigma = 0.0;
};

// Lines "hr_path<TAB>kernel_path<TAB>s<TAB>noise_sigma"; '#' comments.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries);

}  // namespace blindsr
