#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scalegmn/cnn.hpp"
#include "scalegmn/ffnn.hpp"

namespace scalegmn {

/// One manifest record plus its loaded network.
struct ZooItem {
  std::string id;
  double label = 0.0;
  double omega0 = 0.0;
  std::optional<std::uint64_t> signal_seed;  // regenerates the fitted signal
  std::optional<FfnnParams> ffnn;
  std::optional<CnnParams> cnn;

  [[nodiscard]] bool is_cnn() const { return cnn.has_value(); }
};

struct Zoo {
  std::string task;  // free-form tag stored in the manifest
  std::vector<ZooItem> items;
};

/// Little-endian float32 blobs, widened to double on read.
void write_f32(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_f32(const std::filesystem::path& path);

/// Writes manifest.json and one weights file per item under `dir`.
void save_zoo(const Zoo& zoo, const std::filesystem::path& dir);
Zoo load_zoo(const std::filesystem::path& dir);

/// Flat parameter order used by the weight files.
std::vector<double> ffnn_to_flat(const FfnnParams& net);
FfnnParams ffnn_from_flat(const FfnnArch& arch, const std::vector<double>& flat);
std::vector<double> cnn_to_flat(const CnnParams& net);
/// `like` supplies the architecture.
CnnParams cnn_from_flat(const CnnParams& like, const std::vector<double>& flat);

/// Rounds every parameter through float32 (what a saved zoo holds).
FfnnParams round_to_f32(const FfnnParams& net);
CnnParams round_to_f32(const CnnParams& net);

}  // namespace scalegmn
