#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "confcorr/records.hpp"

namespace confcorr {

enum class DriftModel { none, uniform_logprob_inflation, quality_coupled, similarity_coupled };

std::string_view name_of(DriftModel model);
std::optional<DriftModel> parse_drift_model(std::string_view name);

/// Parameters of the synthetic corpus. Each (seed, train size) pair is one run
/// observed at epochs 1..n_epochs, plus epoch 0 when include_pre_sft is set.
///
/// A sample's latent quality is (L - k) / L, where k of the L reference words
/// are replaced in the hypothesis; this equals its token F1.
///   none                       k frozen, confidence = quality + fresh noise per epoch
///   uniform_logprob_inflation  k random walk, every token logprob rises by epsilon per epoch
///   quality_coupled            k random walk, confidence = quality
///   similarity_coupled         k random walk, confidence mixes quality and train similarity by beta
struct SynthSpec {
  std::size_t n_samples = 200;
  int n_epochs = 3;
  bool include_pre_sft = false;
  std::vector<std::int64_t> seeds{0};
  std::vector<std::int64_t> train_sizes;  // empty: n_train_samples unset
  std::size_t vocab_size = 1000;
  DriftModel drift = DriftModel::quality_coupled;
  double epsilon = 0.1;
  double beta = 0.5;
  double noise_scale = 0.05;
  std::size_t sentence_length = 12;
  int n_dropout = 3;
  std::size_t n_beams = 10;
  int distribution_top_k = 4;
  double correct_threshold = 0.75;
  std::string model_name = "synth-model";
  std::string task_name = "synth-task";
  std::size_t embedding_dim = 8;
  std::size_t n_train_embeddings = 32;

  /// Throws Error on an unusable spec.
  void validate() const;
};

nlohmann::json to_json(const SynthSpec& spec);

struct SynthCorpus {
  FileHeader header;
  std::vector<GenerationRecord> records;
  std::vector<std::vector<double>> train_embeddings;
  /// Per run, the sign counts of latent quality deltas between epoch pairs.
  nlohmann::json ground_truth;
};

SynthCorpus generate_synthetic(const SynthSpec& spec);

/// Writes records.jsonl, train_embeddings.jsonl and ground_truth.json into `dir`.
void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir);

}  // namespace confcorr
