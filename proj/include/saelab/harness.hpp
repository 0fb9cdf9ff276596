#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "saelab/config.hpp"
#include "saelab/gba_trainer.hpp"
#include "saelab/synthdata.hpp"

namespace saelab {

inline constexpr const char* kSoftwareVersion = "saelab 0.1.0";

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  CsvWriter& cell(const std::string& v);
  CsvWriter& cell(double v);
  CsvWriter& cell(long long v);
  CsvWriter& cell(int v) { return cell(static_cast<long long>(v)); }
  CsvWriter& cell(std::size_t v) { return cell(static_cast<long long>(v)); }
  void end_row();

 private:
  std::ofstream out_;
  std::size_t columns_;
  std::size_t filled_ = 0;
};

// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

struct DataBundle {
  CoefficientMatrix H;
  FeatureMatrix V;
  Dataset data;
};

// V from (seed, "features"), H from (seed, "coefficients").
DataBundle generate_data(const ExperimentConfig& cfg);

// Held-out rows from the same generator with (seed, "valset"), unit-normalized.
Matrix make_valset(const ExperimentConfig& cfg);

void write_history(const std::filesystem::path& path, const TrainHistory& history, bool with_sparsity_columns);

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& dir, const AdamWHyper& hyper);

enum class Stage { gen, train, eval, sweep, ident, theory };
Stage stage_from_string(const std::string& text);
std::string to_string(Stage stage);

// Runs one stage into out_dir and writes manifest.json listing every output.
// Errors are rethrown as StageFailure naming the stage.
void run_experiment(const ExperimentConfig& cfg, Stage stage, const std::filesystem::path& out_dir);

class StageFailure : public Error {
 public:
  StageFailure(const std::string& stage, const std::string& what) : Error(stage + " stage failed: " + what) {}
};

}  // namespace saelab
