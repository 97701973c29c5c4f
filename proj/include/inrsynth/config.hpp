#pragma once

// Plain-text run configuration: one `key = value` per line, `#` starts a
// comment. Every key is declared in kConfigKeys; anything else is an error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "inrsynth/common.hpp"

namespace inrsynth {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

// clang-format off
inline const std::vector<ConfigKey> kConfigKeys = {
  // phantoms
  {"dims", "64x64x10", "phantom grid, XxYxZ"},
  {"n_train", "105", "training phantoms (pipeline)"},
  {"n_test", "28", "held-out phantoms (pipeline)"},
  {"inner_radius", "auto", "lo,hi in voxels; auto scales the 64-grid defaults"},
  {"wall_thickness", "auto", "lo,hi in voxels"},
  {"blob_count", "0,3", "lo,hi fibrosis blobs per case"},
  {"blob_radius", "auto", "lo,hi in-plane blob radius in voxels"},
  {"drift_max", "auto", "per-slice ring center step in voxels, <= 2"},
  {"noise_sigma", "0.02", "additive Gaussian noise"},
  {"level_background", "0.15", "intensity"},
  {"level_myo", "0.30", "remote myocardium intensity"},
  {"level_blood", "0.75", "blood pool intensity"},
  {"level_fibrosis", "0.85", "fibrosis intensity"},
  // INR fitting
  {"inr_width", "256", "hidden units"},
  {"inr_hidden", "4", "width->width sine layers after the input layer"},
  {"inr_omega0", "30", "sine frequency scale"},
  {"inr_steps", "2000", "optimizer steps per volume"},
  {"inr_coords_per_step", "16384", "coordinate minibatch (capped at the voxel count)"},
  {"inr_lr", "1e-4", "learning rate"},
  {"inr_psnr_target", "0", "early-stop PSNR in dB; 0 disables"},
  {"inr_log_every", "50", "history interval in steps"},
  // embedding
  {"enc_widths", "512,512,512,512", "pointwise encoder widths; last is the latent width"},
  {"dec_cond", "256", "latent projection width"},
  {"dec_width", "256", "decoder sine width"},
  {"dec_layers", "4", "decoder sine layers"},
  {"embed_steps", "3000", "autoencoder steps"},
  {"embed_cases_per_step", "8", "INRs per autoencoder step"},
  {"embed_coords_per_case", "2048", "coordinates per INR per step"},
  {"embed_lr", "1e-3", "learning rate"},
  // diffusion
  {"diff_T", "1000", "timesteps"},
  {"diff_beta_start", "1e-4", "beta_1"},
  {"diff_beta_end", "0.02", "beta_T"},
  {"den_width", "1024", "denoiser hidden width"},
  {"den_layers", "4", "denoiser hidden ReLU layers"},
  {"den_temb", "128", "timestep embedding width"},
  {"diff_steps", "2000", "denoiser steps"},
  {"diff_batch", "64", "denoiser batch"},
  {"diff_lr", "1e-3", "learning rate"},
  {"sampler_noise", "on", "ancestral noise in reverse steps: on|off"},
  // synthesis
  {"n_synth", "200", "synthetic volumes (pipeline)"},
  {"synth_scale", "1", "integer query upsampling"},
  // segmentation benchmark
  {"seg_patch", "9", "odd in-plane patch size"},
  {"seg_hidden", "128,128", "hidden widths"},
  {"seg_epochs", "20", "epochs"},
  {"seg_iters_per_epoch", "50", "batches per epoch"},
  {"seg_batch", "192", "patches per batch (split evenly over the 3 classes)"},
  {"seg_lr", "1e-3", "learning rate"},
  {"seg_real", "8", "real training cases given to the segmenter"},
  {"seg_levels", "0,50,100", "synthetic counts N"},
  {"seg_seeds", "5", "repeat seeds per N"},
};
// clang-format on

class Config {
 public:
  static Config defaults() {
    Config c;
    for (const auto& k : kConfigKeys) c.values_[k.name] = k.default_value;
    return c;
  }

  static bool known(const std::string& key) {
    return std::any_of(kConfigKeys.begin(), kConfigKeys.end(), [&](const ConfigKey& k) { return key == k.name; });
  }

  /// Defaults overridden by the lines of `is`.
  static Config parse(std::istream& is, const std::string& source = "config") {
    Config c = defaults();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      const std::string where = source + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw InvalidArgument(where + ": expected 'key = value'");
      const auto key = trim(line.substr(0, eq));
      const auto value = trim(line.substr(eq + 1));
      if (!known(key)) throw InvalidArgument(where + ": unknown key '" + key + "'");
      c.values_[key] = value;
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw InvalidArgument("cannot read config " + path.string());
    return parse(is, path.filename().string());
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw InvalidArgument("unknown config key '" + key + "'");
    values_[key] = value;
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw InvalidArgument("unknown config key '" + key + "'");
    return it->second;
  }

  bool is_auto(const std::string& key) const { return str(key) == "auto"; }

  double num(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw InvalidArgument("config key '" + key + "': expected a number, got '" + s + "'");
    }
  }

  int integer(const std::string& key) const {
    const double v = num(key);
    if (v != double(int(v))) throw InvalidArgument("config key '" + key + "': expected an integer");
    return int(v);
  }

  bool flag(const std::string& key) const {
    const auto& s = str(key);
    if (s == "on" || s == "true" || s == "1") return true;
    if (s == "off" || s == "false" || s == "0") return false;
    throw InvalidArgument("config key '" + key + "': expected on|off");
  }

  std::vector<double> nums(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stod(trim(item)));
      } catch (const std::exception&) {
        throw InvalidArgument("config key '" + key + "': bad list item '" + item + "'");
      }
    }
    if (out.empty()) throw InvalidArgument("config key '" + key + "': empty list");
    return out;
  }

  std::vector<int> ints(const std::string& key) const {
    std::vector<int> out;
    for (double v : nums(key)) {
      if (v != double(int(v))) throw InvalidArgument("config key '" + key + "': expected integers");
      out.push_back(int(v));
    }
    return out;
  }

  Dims dims(const std::string& key) const { return parse_dims(str(key)); }

  static Dims parse_dims(const std::string& s) {
    Dims d{};
    std::stringstream ss(s);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, 'x')) {
      if (i >= 3) throw InvalidArgument("dims '" + s + "': expected XxYxZ");
      try {
        const long v = std::stol(item);
        if (v < 1) throw std::out_of_range(item);
        d[std::size_t(i++)] = std::uint32_t(v);
      } catch (const std::exception&) {
        throw InvalidArgument("dims '" + s + "': expected positive integers XxYxZ");
      }
    }
    if (i != 3) throw InvalidArgument("dims '" + s + "': expected XxYxZ");
    return d;
  }

  /// Every key with its current value, in declaration order.
  std::string dump() const {
    std::string out;
    for (const auto& k : kConfigKeys) out += std::string(k.name) + " = " + str(k.name) + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace inrsynth
