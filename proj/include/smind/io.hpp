// io.hpp - volume, mask and displacement-field files.
//
// Canonical format: a JSON header
//   {"dims": [nx, ny, nz], "spacing": [sx, sy, sz], "dtype": "f32",
//    "order": "x-fastest", "components": 1, "payload": "<name>.raw"}
// next to a little-endian float32 payload. Fields use components = 3, stored
// component-interleaved per voxel. NIfTI-1 single files (.nii, .nii.gz) can be read.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "smind/transform.hpp"
#include "smind/volume.hpp"

namespace smind {

class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Reads a raw+JSON volume (path to the .json header) or a NIfTI-1 file.
Volume read_volume(const std::filesystem::path &path);

// Writes <stem>.json and <stem>.raw; `path` names the header.
void write_volume(const Volume &vol, const std::filesystem::path &path);

DeformationField read_field(const std::filesystem::path &path);
void write_field(const DeformationField &field, const std::filesystem::path &path);

Volume read_nifti(const std::filesystem::path &path);

} // namespace smind
