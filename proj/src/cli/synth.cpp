#include "confcorr/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "confcorr/dynamics.hpp"

namespace confcorr {

namespace {

constexpr std::array<std::pair<DriftModel, std::string_view>, 4> kDriftNames = {{
    {DriftModel::none, "none"},
    {DriftModel::uniform_logprob_inflation, "uniform_logprob_inflation"},
    {DriftModel::quality_coupled, "quality_coupled"},
    {DriftModel::similarity_coupled, "similarity_coupled"},
}};

// std distributions are implementation-defined; these are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  double normal() {
    if (spare_) {
      const double z = *spare_;
      spare_.reset();
      return z;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

std::uint64_t mix_seed(std::int64_t seed, std::size_t stream) {
  std::uint64_t z = static_cast<std::uint64_t>(seed) + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

double position_offset(std::size_t p) { return -0.03 * static_cast<double>(p % 3) / 2.0; }

double token_entropy(double c, std::size_t p) { return 0.05 + 1.5 * (1.0 - c) + std::abs(position_offset(p)); }

double sum_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

struct LatentSample {
  std::string id;
  std::vector<std::size_t> ref_ids;
  std::vector<std::size_t> error_order;  // positions replaced first
  std::size_t k = 0;
  std::vector<double> embedding;
  double train_similarity = 0.0;
  double base_confidence = 0.0;
  std::vector<double> logprobs;  // carried across epochs by the inflation model
};

struct Builder {
  const SynthSpec& spec;
  Rng& rng;

  std::size_t length() const { return spec.sentence_length; }

  double quality(const LatentSample& s) const {
    return static_cast<double>(length() - s.k) / static_cast<double>(length());
  }

  std::vector<std::string> hypothesis_words(const LatentSample& s) const {
    std::vector<std::string> words;
    for (auto id : s.ref_ids) words.push_back("w" + std::to_string(id));
    for (std::size_t i = 0; i < s.k; ++i) {
      const auto p = s.error_order[i];
      words[p] = "x" + std::to_string(p);
    }
    return words;
  }

  std::int64_t token_id(const std::string& word) const {
    const auto n = static_cast<std::int64_t>(std::stoll(word.substr(1)));
    const auto v = static_cast<std::int64_t>(spec.vocab_size);
    switch (word.front()) {
      case 'w': return n;
      case 'x': return v + n;
      default: return 2 * v + n;
    }
  }

  SequenceEvidence sequence(std::vector<std::string> words, std::vector<double> logprobs,
                            std::optional<std::vector<double>> entropies) const {
    SequenceEvidence seq;
    seq.text = join(words);
    seq.tokens = std::move(words);
    seq.token_logprobs = std::move(logprobs);
    seq.token_entropies = std::move(entropies);
    seq.joint_logprob = sum_of(seq.token_logprobs);
    return seq;
  }

  BeamSet beams(const SequenceEvidence& hyp, double c) const {
    BeamSet set;
    set.beams.push_back(hyp);
    const double gap = 0.5 + 0.5 * c;
    const double n = static_cast<double>(hyp.size());
    for (std::size_t i = 1; i < spec.n_beams; ++i) {
      auto words = hyp.tokens;
      words[(i - 1) % words.size()] = "b" + std::to_string(i);
      const double joint = hyp.joint_logprob - static_cast<double>(i) * gap;
      set.beams.push_back(sequence(std::move(words), std::vector<double>(hyp.size(), joint / n), std::nullopt));
    }
    return set;
  }

  DropoutSet dropout(const SequenceEvidence& hyp, double c) {
    DropoutSet set;
    const auto n = static_cast<std::size_t>(spec.n_dropout);
    const double flip = 0.6 * (1.0 - c);
    std::vector<std::vector<Distribution>> aligned;
    for (std::size_t j = 0; j < n; ++j) {
      auto words = hyp.tokens;
      std::vector<double> lps, ents;
      for (std::size_t p = 0; p < words.size(); ++p) {
        if (rng.uniform() < flip) words[p] = "d" + std::to_string(j * length() + p);
        lps.push_back(hyp.token_logprobs[p] - 0.02 * static_cast<double>(j));
        ents.push_back(token_entropy(c, p) * (1.0 + 0.1 * static_cast<double>(j)));
      }
      set.samples.push_back(sequence(std::move(words), std::move(lps), std::move(ents)));

      std::vector<Distribution> per_position;
      const double spread = n > 1 ? static_cast<double>(j) / static_cast<double>(n - 1) : 0.0;
      const double top = std::clamp(0.5 + 0.45 * c - (1.0 - c) * 0.3 * spread, 0.05, 0.95);
      const auto others = static_cast<std::size_t>(spec.distribution_top_k - 1);
      for (std::size_t p = 0; p < hyp.size(); ++p) {
        Distribution d;
        const auto id = token_id(hyp.tokens[p]);
        d.token_ids.push_back(id);
        d.probs.push_back(top);
        for (std::size_t o = 0; o < others; ++o) {
          d.token_ids.push_back(3 * static_cast<std::int64_t>(spec.vocab_size) + static_cast<std::int64_t>(p * others + o));
          d.probs.push_back(0.9 * (1.0 - top) / static_cast<double>(others));
        }
        per_position.push_back(std::move(d));
      }
      aligned.push_back(std::move(per_position));
    }
    set.aligned_distributions = std::move(aligned);
    return set;
  }

  std::vector<double> logprobs_for(double c) const {
    std::vector<double> lps;
    for (std::size_t p = 0; p < length(); ++p) lps.push_back(std::log(0.15 + 0.8 * c) + position_offset(p));
    return lps;
  }

  std::vector<double> entropies_for(double c) const {
    std::vector<double> ents;
    for (std::size_t p = 0; p < length(); ++p) ents.push_back(token_entropy(c, p));
    return ents;
  }
};

}  // namespace

std::string_view name_of(DriftModel model) {
  for (const auto& [m, name] : kDriftNames) {
    if (m == model) return name;
  }
  return "unknown";
}

std::optional<DriftModel> parse_drift_model(std::string_view name) {
  for (const auto& [m, n] : kDriftNames) {
    if (n == name) return m;
  }
  return std::nullopt;
}

void SynthSpec::validate() const {
  if (n_samples < 3) throw Error("synth: need at least 3 samples");
  if (n_epochs < 1) throw Error("synth: need at least 1 epoch");
  if (seeds.empty()) throw Error("synth: need at least one seed");
  if (sentence_length < 6) throw Error("synth: sentence length must be >= 6");
  if (vocab_size < sentence_length) throw Error("synth: vocabulary smaller than a sentence");
  if (n_dropout < 1) throw Error("synth: n_dropout must be >= 1");
  if (n_beams < 1) throw Error("synth: need at least 1 beam");
  if (distribution_top_k < 2) throw Error("synth: distribution_top_k must be >= 2");
  if (!(epsilon >= 0.0)) throw Error("synth: epsilon must be >= 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error("synth: beta must lie in [0, 1]");
  if (!(noise_scale >= 0.0)) throw Error("synth: noise scale must be >= 0");
  if (embedding_dim < 1 || n_train_embeddings < 1) throw Error("synth: empty embedding space");
  for (auto n : train_sizes) {
    if (n <= 0) throw Error("synth: train sizes must be > 0");
  }
}

nlohmann::json to_json(const SynthSpec& spec) {
  return {
      {"n_samples", spec.n_samples},
      {"n_epochs", spec.n_epochs},
      {"include_pre_sft", spec.include_pre_sft},
      {"seeds", spec.seeds},
      {"train_sizes", spec.train_sizes},
      {"vocab_size", spec.vocab_size},
      {"drift_model", name_of(spec.drift)},
      {"epsilon", spec.epsilon},
      {"beta", spec.beta},
      {"noise_scale", spec.noise_scale},
      {"sentence_length", spec.sentence_length},
      {"n_dropout", spec.n_dropout},
      {"n_beams", spec.n_beams},
      {"distribution_top_k", spec.distribution_top_k},
      {"correct_threshold", spec.correct_threshold},
      {"model", spec.model_name},
      {"task", spec.task_name},
      {"embedding_dim", spec.embedding_dim},
      {"n_train_embeddings", spec.n_train_embeddings},
  };
}

SynthCorpus generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  SynthCorpus corpus;
  corpus.header.distribution_top_k = spec.distribution_top_k;
  corpus.header.n_dropout = spec.n_dropout;
  corpus.header.extra = {{"generator", "confcorr synth"}, {"latent_quality", "token_f1"}, {"synth", to_json(spec)}};

  Rng embed_rng(mix_seed(spec.seeds.front(), 0));
  for (std::size_t i = 0; i < spec.n_train_embeddings; ++i) {
    std::vector<double> e(spec.embedding_dim);
    for (auto& x : e) x = embed_rng.normal();
    corpus.train_embeddings.push_back(std::move(e));
  }

  std::vector<int> epochs;
  if (spec.include_pre_sft) epochs.push_back(0);
  for (int e = 1; e <= spec.n_epochs; ++e) epochs.push_back(e);

  std::vector<std::optional<std::int64_t>> sizes;
  if (spec.train_sizes.empty()) sizes.emplace_back(std::nullopt);
  for (auto n : spec.train_sizes) sizes.emplace_back(n);

  const std::size_t L = spec.sentence_length;
  const bool walk = spec.drift != DriftModel::none;
  corpus.ground_truth = {{"drift_model", name_of(spec.drift)}, {"latent_quality", "token_f1"}, {"runs", nlohmann::json::array()}};

  std::size_t stream = 1;
  for (auto seed : spec.seeds) {
    for (const auto& size : sizes) {
      Rng rng(mix_seed(seed, stream++));
      Builder build{spec, rng};
      CheckpointKey key{spec.model_name, spec.task_name, 0, seed, size};

      std::vector<LatentSample> samples(spec.n_samples);
      for (std::size_t s = 0; s < samples.size(); ++s) {
        auto& sample = samples[s];
        char id[32];
        std::snprintf(id, sizeof id, "s%05zu", s);
        sample.id = id;
        while (sample.ref_ids.size() < L) {
          const auto w = rng.below(spec.vocab_size);
          if (std::find(sample.ref_ids.begin(), sample.ref_ids.end(), w) == sample.ref_ids.end()) {
            sample.ref_ids.push_back(w);
          }
        }
        sample.error_order.resize(L);
        for (std::size_t p = 0; p < L; ++p) sample.error_order[p] = p;
        for (std::size_t p = L - 1; p > 0; --p) std::swap(sample.error_order[p], sample.error_order[rng.below(p + 1)]);
        sample.k = rng.below(L / 2 + 1);

        const auto& anchor = corpus.train_embeddings[rng.below(corpus.train_embeddings.size())];
        const double lambda = rng.uniform();
        sample.embedding.resize(spec.embedding_dim);
        for (std::size_t d = 0; d < spec.embedding_dim; ++d) {
          sample.embedding[d] = lambda * anchor[d] + (1.0 - lambda) * rng.normal();
        }
        sample.train_similarity = max_cosine_similarity(sample.embedding, corpus.train_embeddings);
        sample.base_confidence = clamp01(build.quality(sample) + spec.noise_scale * rng.normal());
        sample.logprobs = build.logprobs_for(sample.base_confidence);
        const double lift = spec.epsilon * static_cast<double>(epochs.size() - 1);
        for (auto& lp : sample.logprobs) lp -= lift;
      }

      std::vector<std::vector<std::size_t>> k_by_epoch;
      for (std::size_t e = 0; e < epochs.size(); ++e) {
        key.epoch = epochs[e];
        if (e > 0 && walk) {
          for (auto& sample : samples) {
            const auto step = static_cast<int>(rng.below(3)) - 1;
            sample.k = static_cast<std::size_t>(std::clamp(static_cast<int>(sample.k) + step, 0, static_cast<int>(L)));
          }
        }
        if (e > 0 && spec.drift == DriftModel::uniform_logprob_inflation) {
          for (auto& sample : samples) {
            for (auto& lp : sample.logprobs) lp += spec.epsilon;
          }
        }
        std::vector<std::size_t> ks;
        for (auto& sample : samples) {
          ks.push_back(sample.k);
          const double q = build.quality(sample);
          double c = 0.0;
          std::vector<double> lps;
          switch (spec.drift) {
            case DriftModel::none:
              c = clamp01(q + spec.noise_scale * rng.normal());
              lps = build.logprobs_for(c);
              break;
            case DriftModel::uniform_logprob_inflation:
              c = sample.base_confidence;
              lps = sample.logprobs;
              break;
            case DriftModel::quality_coupled:
              c = q;
              lps = build.logprobs_for(c);
              break;
            case DriftModel::similarity_coupled: {
              const double sim01 = (sample.train_similarity + 1.0) / 2.0;
              c = clamp01(spec.beta * sim01 + (1.0 - spec.beta) * q + spec.noise_scale * rng.normal());
              lps = build.logprobs_for(c);
              break;
            }
          }

          GenerationRecord r;
          r.sample_id = sample.id;
          r.checkpoint = key;
          r.input_text = "input " + sample.id;
          std::vector<std::string> ref_words;
          for (auto id : sample.ref_ids) ref_words.push_back("w" + std::to_string(id));
          r.references = {join(ref_words)};
          r.hypothesis = build.sequence(build.hypothesis_words(sample), std::move(lps), build.entropies_for(c));
          r.beams = build.beams(r.hypothesis, c);
          r.dropout = build.dropout(r.hypothesis, c);
          r.correctness_label = q >= spec.correct_threshold;
          r.embedding = sample.embedding;
          r.train_similarity = sample.train_similarity;
          corpus.records.push_back(std::move(r));
        }
        k_by_epoch.push_back(std::move(ks));
      }

      auto run = to_json(key);
      run.erase("epoch");
      nlohmann::json transitions = nlohmann::json::array();
      auto count = [&](std::size_t a, std::size_t b) {
        std::size_t neg = 0, zero = 0, pos = 0;
        for (std::size_t s = 0; s < samples.size(); ++s) {
          // quality falls exactly when more words are replaced
          if (k_by_epoch[b][s] > k_by_epoch[a][s]) {
            ++neg;
          } else if (k_by_epoch[b][s] == k_by_epoch[a][s]) {
            ++zero;
          } else {
            ++pos;
          }
        }
        const double n = static_cast<double>(samples.size());
        transitions.push_back({{"from_epoch", epochs[a]},
                               {"to_epoch", epochs[b]},
                               {"n", samples.size()},
                               {"negative", neg},
                               {"zero", zero},
                               {"positive", pos},
                               {"negative_fraction", static_cast<double>(neg) / n}});
      };
      for (std::size_t e = 1; e < epochs.size(); ++e) count(e - 1, e);
      const std::size_t first_post = spec.include_pre_sft ? 1 : 0;
      if (epochs.size() - first_post > 2) count(first_post, epochs.size() - 1);
      if (spec.include_pre_sft && epochs.size() > 2) count(0, epochs.size() - 1);
      corpus.ground_truth["runs"].push_back({{"run", run}, {"transitions", transitions}});
    }
  }
  return corpus;
}

void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_records(dir / "records.jsonl", corpus.header, corpus.records);

  const auto emb_path = dir / "train_embeddings.jsonl";
  std::ofstream emb(emb_path, std::ios::binary);
  if (!emb) throw IoError("cannot write " + emb_path.string());
  for (const auto& e : corpus.train_embeddings) emb << nlohmann::json(e).dump() << '\n';

  const auto truth_path = dir / "ground_truth.json";
  std::ofstream truth(truth_path, std::ios::binary);
  if (!truth) throw IoError("cannot write " + truth_path.string());
  truth << corpus.ground_truth.dump(2) << '\n';
  if (!emb || !truth) throw IoError("write failed in " + dir.string());
}

}  // namespace confcorr
