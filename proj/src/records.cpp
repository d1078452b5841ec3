#include "confcorr/records.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <unordered_set>

namespace confcorr {

using nlohmann::json;

bool same_run(const CheckpointKey& a, const CheckpointKey& b) {
  return a.model_name == b.model_name && a.task_name == b.task_name && a.seed == b.seed &&
         a.n_train_samples == b.n_train_samples;
}

CheckpointKey run_of(const CheckpointKey& key) {
  CheckpointKey run = key;
  run.epoch = 0;
  return run;
}

std::string describe(const CheckpointKey& key) {
  std::string s = key.model_name + "/" + key.task_name + " epoch=" + std::to_string(key.epoch) +
                  " seed=" + std::to_string(key.seed);
  if (key.n_train_samples) s += " n_train=" + std::to_string(*key.n_train_samples);
  return s;
}

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ValidationError(where.empty() ? what : where + ": " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) fail(where, std::string("missing required field '") + key + "'");
  return *it;
}

const json* optional_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return nullptr;
  return &*it;
}

std::string get_string(const json& v, const std::string& where) {
  if (!v.is_string()) fail(where, "expected a string");
  return v.get<std::string>();
}

double get_number(const json& v, const std::string& where) {
  if (!v.is_number()) fail(where, "expected a number");
  double x = v.get<double>();
  if (!std::isfinite(x)) fail(where, "expected a finite number");
  return x;
}

std::int64_t get_integer(const json& v, const std::string& where) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    double x = v.get<double>();
    if (std::isfinite(x) && std::floor(x) == x) return static_cast<std::int64_t>(x);
  }
  fail(where, "expected an integer");
}

std::vector<double> get_numbers(const json& v, const std::string& where) {
  if (!v.is_array()) fail(where, "expected an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(get_number(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<std::string> get_strings(const json& v, const std::string& where) {
  if (!v.is_array()) fail(where, "expected an array of strings");
  std::vector<std::string> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(get_string(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

SequenceEvidence sequence_from_json(const json& j, const std::string& where, const LoadOptions& options) {
  if (!j.is_object()) fail(where, "expected an object");
  SequenceEvidence seq;
  seq.text = get_string(require(j, "text", where), where + ".text");
  seq.tokens = get_strings(require(j, "tokens", where), where + ".tokens");
  seq.token_logprobs = get_numbers(require(j, "token_logprobs", where), where + ".token_logprobs");
  if (const json* ent = optional_field(j, "token_entropies")) {
    seq.token_entropies = get_numbers(*ent, where + ".token_entropies");
  }
  seq.joint_logprob = get_number(require(j, "joint_logprob", where), where + ".joint_logprob");

  if (seq.tokens.size() != seq.token_logprobs.size()) {
    fail(where, "token count " + std::to_string(seq.tokens.size()) + " does not match " +
                    std::to_string(seq.token_logprobs.size()) + " token_logprobs");
  }
  for (double lp : seq.token_logprobs) {
    if (lp > 0.0) fail(where, "token log-probability " + std::to_string(lp) + " is positive");
  }
  if (seq.token_entropies) {
    if (seq.token_entropies->size() != seq.tokens.size()) {
      fail(where, "token count " + std::to_string(seq.tokens.size()) + " does not match " +
                      std::to_string(seq.token_entropies->size()) + " token_entropies");
    }
    for (double h : *seq.token_entropies) {
      if (h < 0.0) fail(where, "negative token entropy");
    }
  }
  if (seq.joint_logprob > 0.0) fail(where, "joint_logprob is positive");
  double sum = std::accumulate(seq.token_logprobs.begin(), seq.token_logprobs.end(), 0.0);
  if (std::abs(sum - seq.joint_logprob) > options.logprob_tolerance) {
    fail(where, "joint_logprob " + std::to_string(seq.joint_logprob) + " differs from the token log-probability sum " +
                    std::to_string(sum));
  }
  return seq;
}

Distribution distribution_from_json(const json& j, const std::string& where, const LoadOptions& options) {
  if (!j.is_object()) fail(where, "expected an object");
  Distribution d;
  const json& ids = require(j, "token_ids", where);
  if (!ids.is_array()) fail(where + ".token_ids", "expected an array of integers");
  for (std::size_t i = 0; i < ids.size(); ++i) d.token_ids.push_back(get_integer(ids[i], where + ".token_ids"));
  d.probs = get_numbers(require(j, "probs", where), where + ".probs");
  if (d.token_ids.size() != d.probs.size()) fail(where, "token_ids and probs differ in length");
  if (d.token_ids.empty()) fail(where, "empty distribution");
  std::unordered_set<std::int64_t> seen;
  for (auto id : d.token_ids) {
    if (!seen.insert(id).second) fail(where, "duplicate token id " + std::to_string(id));
  }
  double sum = 0.0;
  for (double p : d.probs) {
    if (p < 0.0 || p > 1.0) fail(where, "probability outside [0,1]");
    sum += p;
  }
  // Truncated distributions carry mass below 1; mass above 1 is never valid.
  if (sum > 1.0 + options.prob_tolerance) {
    fail(where, "probabilities sum to " + std::to_string(sum) + " (> 1 beyond tolerance)");
  }
  if (sum <= 0.0) fail(where, "probabilities sum to zero");
  if (std::abs(sum - 1.0) > 1e-12) {
    for (double& p : d.probs) p /= sum;
  }
  return d;
}

}  // namespace

CheckpointKey checkpoint_from_json(const json& j) {
  const std::string where = "checkpoint";
  if (!j.is_object()) fail(where, "expected an object");
  CheckpointKey key;
  key.model_name = get_string(require(j, "model", where), where + ".model");
  key.task_name = get_string(require(j, "task", where), where + ".task");
  auto epoch = get_integer(require(j, "epoch", where), where + ".epoch");
  if (epoch < 0) fail(where + ".epoch", "must be >= 0");
  key.epoch = static_cast<int>(epoch);
  key.seed = get_integer(require(j, "seed", where), where + ".seed");
  if (const json* n = optional_field(j, "n_train_samples")) {
    auto v = get_integer(*n, where + ".n_train_samples");
    if (v <= 0) fail(where + ".n_train_samples", "must be > 0");
    key.n_train_samples = v;
  }
  return key;
}

GenerationRecord record_from_json(const json& j, int n_dropout, const LoadOptions& options) {
  if (!j.is_object()) fail("", "record is not a JSON object");
  GenerationRecord r;
  r.sample_id = get_string(require(j, "sample_id", ""), "sample_id");
  if (r.sample_id.empty()) fail("sample_id", "must be non-empty");
  r.checkpoint = checkpoint_from_json(require(j, "checkpoint", ""));
  if (const json* in = optional_field(j, "input_text")) r.input_text = get_string(*in, "input_text");
  r.references = get_strings(require(j, "references", ""), "references");
  if (r.references.empty()) fail("references", "must be non-empty");
  r.hypothesis = sequence_from_json(require(j, "hypothesis", ""), "hypothesis", options);

  if (const json* beams = optional_field(j, "beams")) {
    if (!beams->is_array()) fail("beams", "expected an array");
    BeamSet set;
    for (std::size_t i = 0; i < beams->size(); ++i) {
      set.beams.push_back(sequence_from_json((*beams)[i], "beams[" + std::to_string(i) + "]", options));
    }
    for (std::size_t i = 1; i < set.beams.size(); ++i) {
      if (set.beams[i].joint_logprob > set.beams[i - 1].joint_logprob) {
        fail("beams", "not ordered by descending joint_logprob at index " + std::to_string(i));
      }
    }
    r.beams = std::move(set);
  }

  if (const json* dj = optional_field(j, "dropout")) {
    if (!dj->is_object()) fail("dropout", "expected an object");
    DropoutSet set;
    const json& samples = require(*dj, "samples", "dropout");
    if (!samples.is_array()) fail("dropout.samples", "expected an array");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      set.samples.push_back(sequence_from_json(samples[i], "dropout.samples[" + std::to_string(i) + "]", options));
    }
    if (static_cast<int>(set.samples.size()) != n_dropout) {
      fail("dropout.samples", "expected " + std::to_string(n_dropout) + " dropout samples, found " +
                                  std::to_string(set.samples.size()));
    }
    if (const json* aligned = optional_field(*dj, "aligned_distributions")) {
      if (!aligned->is_array()) fail("dropout.aligned_distributions", "expected an array");
      if (aligned->size() != set.samples.size()) {
        fail("dropout.aligned_distributions", "expected one entry per dropout instance");
      }
      std::vector<std::vector<Distribution>> all;
      for (std::size_t i = 0; i < aligned->size(); ++i) {
        const std::string where = "dropout.aligned_distributions[" + std::to_string(i) + "]";
        const json& per = (*aligned)[i];
        if (!per.is_array()) fail(where, "expected an array");
        if (per.size() != r.hypothesis.size()) {
          fail(where, "length " + std::to_string(per.size()) + " does not match the hypothesis token count " +
                          std::to_string(r.hypothesis.size()));
        }
        std::vector<Distribution> positions;
        positions.reserve(per.size());
        for (std::size_t t = 0; t < per.size(); ++t) {
          positions.push_back(distribution_from_json(per[t], where + "[" + std::to_string(t) + "]", options));
        }
        all.push_back(std::move(positions));
      }
      set.aligned_distributions = std::move(all);
    }
    r.dropout = std::move(set);
  }

  if (const json* label = optional_field(j, "correctness_label")) {
    if (!label->is_boolean()) fail("correctness_label", "expected a boolean");
    r.correctness_label = label->get<bool>();
  }
  if (const json* emb = optional_field(j, "embedding")) {
    r.embedding = get_numbers(*emb, "embedding");
  }
  if (const json* sim = optional_field(j, "train_similarity")) {
    double s = get_number(*sim, "train_similarity");
    if (s < -1.0 || s > 1.0) fail("train_similarity", "must lie in [-1, 1]");
    r.train_similarity = s;
  }
  return r;
}

namespace {

FileHeader header_from_json(const json& j) {
  FileHeader h;
  auto version = get_integer(j.at("schema_version"), "schema_version");
  if (version != kSchemaVersion) {
    fail("schema_version", "unsupported schema version " + std::to_string(version));
  }
  h.schema_version = static_cast<int>(version);
  for (const auto& [key, value] : j.items()) {
    if (key == "schema_version") continue;
    if (key == "distribution_top_k") {
      h.distribution_top_k = static_cast<int>(get_integer(value, key));
    } else if (key == "n_dropout") {
      auto n = get_integer(value, key);
      if (n <= 0) fail(key, "must be > 0");
      h.n_dropout = static_cast<int>(n);
    } else {
      h.extra[key] = value;
    }
  }
  return h;
}

}  // namespace

LoadResult parse_records(std::istream& in, const LoadOptions& options) {
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  int n_dropout = kDefaultDropoutCount;
  std::set<std::pair<CheckpointKey, std::string>> seen_ids;

  auto reject = [&](std::size_t at, const std::string& message) {
    if (options.strictness == Strictness::strict) throw ValidationError(message, at);
    result.violations.push_back({at, message});
    ++result.skipped;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      if (!have_header) throw ValidationError(std::string("malformed JSON header: ") + e.what(), line_no);
      reject(line_no, std::string("malformed JSON: ") + e.what());
      continue;
    }

    if (!have_header) {
      if (!j.is_object() || !j.contains("schema_version")) {
        throw ValidationError("missing file header (first object must carry \"schema_version\")", line_no);
      }
      try {
        result.header = header_from_json(j);
      } catch (const ValidationError& e) {
        throw ValidationError(std::string("invalid header: ") + e.what(), line_no);
      }
      n_dropout = options.n_dropout.value_or(result.header.n_dropout.value_or(kDefaultDropoutCount));
      have_header = true;
      continue;
    }

    try {
      GenerationRecord record = record_from_json(j, n_dropout, options);
      if (!seen_ids.emplace(record.checkpoint, record.sample_id).second) {
        reject(line_no, "duplicate sample_id '" + record.sample_id + "' within checkpoint " +
                            describe(record.checkpoint));
        continue;
      }
      result.records.push_back(std::move(record));
    } catch (const ValidationError& e) {
      reject(line_no, e.what());
    }
  }
  if (!have_header) throw ValidationError("empty file: missing header line", 1);
  return result;
}

LoadResult load_records(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open record file " + path.string());
  return parse_records(in, options);
}

json to_json(const CheckpointKey& key) {
  json j = {{"model", key.model_name}, {"task", key.task_name}, {"epoch", key.epoch}, {"seed", key.seed}};
  if (key.n_train_samples) j["n_train_samples"] = *key.n_train_samples;
  return j;
}

json to_json(const SequenceEvidence& seq) {
  json j = {{"text", seq.text}, {"tokens", seq.tokens}, {"token_logprobs", seq.token_logprobs}};
  if (seq.token_entropies) j["token_entropies"] = *seq.token_entropies;
  j["joint_logprob"] = seq.joint_logprob;
  return j;
}

json to_json(const GenerationRecord& r) {
  json j;
  j["sample_id"] = r.sample_id;
  j["checkpoint"] = to_json(r.checkpoint);
  j["input_text"] = r.input_text;
  j["references"] = r.references;
  j["hypothesis"] = to_json(r.hypothesis);
  if (r.beams) {
    json beams = json::array();
    for (const auto& b : r.beams->beams) beams.push_back(to_json(b));
    j["beams"] = std::move(beams);
  }
  if (r.dropout) {
    json samples = json::array();
    for (const auto& s : r.dropout->samples) samples.push_back(to_json(s));
    json d = {{"samples", std::move(samples)}};
    if (r.dropout->aligned_distributions) {
      json aligned = json::array();
      for (const auto& per : *r.dropout->aligned_distributions) {
        json positions = json::array();
        for (const auto& dist : per) positions.push_back({{"token_ids", dist.token_ids}, {"probs", dist.probs}});
        aligned.push_back(std::move(positions));
      }
      d["aligned_distributions"] = std::move(aligned);
    }
    j["dropout"] = std::move(d);
  }
  if (r.correctness_label) j["correctness_label"] = *r.correctness_label;
  if (r.embedding) j["embedding"] = *r.embedding;
  if (r.train_similarity) j["train_similarity"] = *r.train_similarity;
  return j;
}

json to_json(const FileHeader& header) {
  json j = {{"schema_version", header.schema_version}};
  if (header.distribution_top_k) j["distribution_top_k"] = *header.distribution_top_k;
  if (header.n_dropout) j["n_dropout"] = *header.n_dropout;
  for (const auto& [key, value] : header.extra.items()) j[key] = value;
  return j;
}

void write_records(std::ostream& out, const FileHeader& header, std::span<const GenerationRecord> records) {
  out << to_json(header).dump() << '\n';
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

void write_records(const std::filesystem::path& path, const FileHeader& header,
                   std::span<const GenerationRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_records(out, header, records);
  if (!out) throw IoError("write failed for " + path.string());
}

std::map<CheckpointKey, std::vector<GenerationRecord>> group_by_checkpoint(
    std::span<const GenerationRecord> records) {
  std::map<CheckpointKey, std::vector<GenerationRecord>> groups;
  for (const auto& r : records) groups[r.checkpoint].push_back(r);
  return groups;
}

Pairing<GenerationRecord> pair_checkpoints(std::span<const GenerationRecord> from,
                                           std::span<const GenerationRecord> to) {
  return pair_by_sample_id(from, to);
}

}  // namespace confcorr
