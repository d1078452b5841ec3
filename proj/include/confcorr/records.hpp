#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "confcorr/error.hpp"

namespace confcorr {

inline constexpr int kSchemaVersion = 1;
inline constexpr int kDefaultDropoutCount = 3;

/// Identifies the fine-tuning state a record was generated at. Epoch 0 is the
/// model before any supervised fine-tuning.
struct CheckpointKey {
  std::string model_name;
  std::string task_name;
  int epoch = 0;
  std::int64_t seed = 0;
  std::optional<std::int64_t> n_train_samples;

  auto operator<=>(const CheckpointKey&) const = default;
  bool operator==(const CheckpointKey&) const = default;
};

/// True when both keys describe the same training run (every field but the epoch).
bool same_run(const CheckpointKey& a, const CheckpointKey& b);

/// The key with the epoch zeroed, usable as a run identifier.
CheckpointKey run_of(const CheckpointKey& key);

std::string describe(const CheckpointKey& key);

/// Truncated categorical distribution over token ids at one decode position.
struct Distribution {
  std::vector<std::int64_t> token_ids;
  std::vector<double> probs;

  bool operator==(const Distribution&) const = default;
};

struct SequenceEvidence {
  std::string text;
  std::vector<std::string> tokens;
  std::vector<double> token_logprobs;  // natural log, one per token
  std::optional<std::vector<double>> token_entropies;  // nats, full vocabulary
  double joint_logprob = 0.0;

  std::size_t size() const noexcept { return tokens.size(); }
  bool operator==(const SequenceEvidence&) const = default;
};

/// Beam-search candidates, best first.
struct BeamSet {
  std::vector<SequenceEvidence> beams;
  std::optional<std::vector<double>> importance_weights;

  bool operator==(const BeamSet&) const = default;
};

/// Free-running decodes with dropout active, plus optional distributions
/// force-decoded along the primary hypothesis (one list per dropout mask).
struct DropoutSet {
  std::vector<SequenceEvidence> samples;
  std::optional<std::vector<std::vector<Distribution>>> aligned_distributions;

  bool operator==(const DropoutSet&) const = default;
};

struct GenerationRecord {
  std::string sample_id;
  CheckpointKey checkpoint;
  std::string input_text;
  std::vector<std::string> references;
  SequenceEvidence hypothesis;
  std::optional<BeamSet> beams;
  std::optional<DropoutSet> dropout;
  std::optional<bool> correctness_label;
  std::optional<std::vector<double>> embedding;
  std::optional<double> train_similarity;

  bool operator==(const GenerationRecord&) const = default;
};

/// First line of every record file.
struct FileHeader {
  int schema_version = kSchemaVersion;
  std::optional<int> distribution_top_k;
  std::optional<int> n_dropout;
  /// Any additional exporter-provided keys, preserved verbatim.
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const FileHeader&) const = default;
};

enum class Strictness { strict, lenient };

struct LoadOptions {
  Strictness strictness = Strictness::strict;
  /// Expected dropout sample count; falls back to the header's n_dropout, then 3.
  std::optional<int> n_dropout;
  double prob_tolerance = 1e-6;
  double logprob_tolerance = 1e-6;
};

struct Violation {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  FileHeader header;
  std::vector<GenerationRecord> records;
  std::size_t skipped = 0;
  std::vector<Violation> violations;
};

/// Reads a JSONL record file. Strict mode throws ValidationError naming the
/// first offending line; lenient mode skips offending records and lists them in
/// `violations`. A missing or invalid header is fatal in both modes.
LoadResult load_records(const std::filesystem::path& path, const LoadOptions& options = {});
LoadResult parse_records(std::istream& in, const LoadOptions& options = {});

/// Parses and validates one record object. `n_dropout` is the expected dropout
/// sample count. Distributions are renormalized in place of the input values.
GenerationRecord record_from_json(const nlohmann::json& j, int n_dropout, const LoadOptions& options = {});

nlohmann::json to_json(const CheckpointKey& key);
CheckpointKey checkpoint_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SequenceEvidence& seq);
nlohmann::json to_json(const GenerationRecord& record);
nlohmann::json to_json(const FileHeader& header);

void write_records(std::ostream& out, const FileHeader& header, std::span<const GenerationRecord> records);
void write_records(const std::filesystem::path& path, const FileHeader& header,
                   std::span<const GenerationRecord> records);

/// Partitions records by checkpoint; each group keeps input order.
std::map<CheckpointKey, std::vector<GenerationRecord>> group_by_checkpoint(
    std::span<const GenerationRecord> records);

template <typename Row>
struct Pairing {
  std::vector<std::pair<const Row*, const Row*>> pairs;
  std::vector<std::string> only_in_from;
  std::vector<std::string> only_in_to;
};

/// Matches two groups of the same run at different epochs by sample_id. Works
/// for any row type carrying `sample_id` and `checkpoint`. Pairs follow the
/// order of `from`; the pointers refer into the argument ranges.
template <typename Row>
Pairing<Row> pair_by_sample_id(std::span<const Row> from, std::span<const Row> to) {
  if (!from.empty() && !to.empty()) {
    const auto& a = from.front().checkpoint;
    const auto& b = to.front().checkpoint;
    if (!same_run(a, b)) {
      throw Error("cannot pair checkpoints of different runs: " + describe(a) + " vs " + describe(b));
    }
    if (a.epoch == b.epoch) {
      throw Error("cannot pair two groups at the same epoch " + std::to_string(a.epoch));
    }
  }
  std::unordered_map<std::string, const Row*> by_id;
  by_id.reserve(to.size());
  for (const auto& row : to) by_id.emplace(row.sample_id, &row);

  Pairing<Row> out;
  std::unordered_map<std::string, bool> matched;
  for (const auto& row : from) {
    auto it = by_id.find(row.sample_id);
    if (it == by_id.end()) {
      out.only_in_from.push_back(row.sample_id);
    } else {
      out.pairs.emplace_back(&row, it->second);
      matched[row.sample_id] = true;
    }
  }
  for (const auto& row : to) {
    if (!matched.contains(row.sample_id)) out.only_in_to.push_back(row.sample_id);
  }
  return out;
}

Pairing<GenerationRecord> pair_checkpoints(std::span<const GenerationRecord> from,
                                           std::span<const GenerationRecord> to);

}  // namespace confcorr
