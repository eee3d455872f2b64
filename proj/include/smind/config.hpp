// config.hpp - every hyperparameter of both stages as a flat "key = value" file.

#pragma once

#include <filesystem>
#include <string>

#include "smind/optimizer.hpp"
#include "smind/volume.hpp"

namespace smind {

struct RegistrationConfig {
    // coarse stage
    int bins = 32;
    double kernel_bandwidth = 0.0; // <= 0: one bin width
    int window = 7;
    double epsilon = 1e-7;
    double coarse_smoothing = 1.0; // voxels
    double coarse_lr = 0.01;
    int coarse_iters = 500;
    int coarse_patience = 25;
    double coarse_min_delta = 1e-5;

    // deformable stage
    int search_radius = 4;
    double tau = 0.05;
    double sigma = 2.0;
    double lambda = 1.0;
    int levels = 3;
    double deform_smoothing = 1.0; // voxels
    double deform_lr = 1e-4;
    int deform_iters = 200;
    int deform_patience = 20;
    double deform_min_delta = 1e-5;
    double deform_displacement_scale = 40.0;

    // common grid
    Vec3 target_spacing{1.0, 1.0, 2.5};
    Index3 target_dims{256, 256, 48};

    void validate() const;
    CoarseConfig coarse() const;
    DeformableConfig deformable() const;
    GridSpec grid() const;

    bool operator==(const RegistrationConfig &) const = default;
};

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Missing keys keep their defaults; unknown keys and malformed values throw ConfigError.
RegistrationConfig parse_config(const std::string &text);
std::string format_config(const RegistrationConfig &cfg);

RegistrationConfig load_config(const std::filesystem::path &path);
void save_config(const RegistrationConfig &cfg, const std::filesystem::path &path);

} // namespace smind
