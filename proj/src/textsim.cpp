#include "confcorr/textsim.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>

#include "confcorr/error.hpp"

namespace confcorr {

namespace {

constexpr std::array<QualityMetric, 5> kQualityMetrics = {
    QualityMetric::chrf_plus, QualityMetric::token_f1, QualityMetric::exact_match, QualityMetric::bleu,
    QualityMetric::meteor_lite};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> lowered_words(std::string_view text) {
  auto words = split_words(text);
  for (auto& w : words) w = ascii_lower(w);
  return words;
}

// Lenient UTF-8 decoding; invalid bytes map to themselves.
std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    auto b = static_cast<unsigned char>(s[i]);
    std::size_t len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : (b >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) {
      out.push_back(b);
      ++i;
      continue;
    }
    char32_t cp = len == 1 ? b : len == 2 ? (b & 0x1F) : len == 3 ? (b & 0x0F) : (b & 0x07);
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      auto c = static_cast<unsigned char>(s[i + k]);
      if ((c >> 6) != 0x2) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (c & 0x3F);
    }
    if (!ok) {
      out.push_back(b);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

template <typename Key>
using Counts = std::unordered_map<Key, int>;

struct OrderStats {
  int hyp = 0;
  int ref = 0;
  int match = 0;
};

template <typename Key>
OrderStats match_stats(const Counts<Key>& hyp, const Counts<Key>& ref) {
  OrderStats s;
  for (const auto& [gram, count] : hyp) {
    s.hyp += count;
    auto it = ref.find(gram);
    if (it != ref.end()) s.match += std::min(count, it->second);
  }
  for (const auto& [gram, count] : ref) s.ref += count;
  return s;
}

// ---- chrF+ ----

constexpr int kCharOrder = 6;
constexpr double kChrfBeta = 2.0;

bool is_chrf_punct(char c) {
  static constexpr std::string_view kPuncts = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
  return kPuncts.find(c) != std::string_view::npos;
}

struct ChrfGrams {
  std::array<Counts<std::u32string>, kCharOrder> chars;
  Counts<std::string> words;
  bool empty = true;
};

ChrfGrams chrf_grams(std::string_view text) {
  ChrfGrams g;
  std::string stripped;
  stripped.reserve(text.size());
  for (char c : text) {
    if (!is_space(c)) stripped.push_back(c);
  }
  g.empty = stripped.empty();
  const std::u32string cps = decode_utf8(stripped);
  for (int n = 1; n <= kCharOrder; ++n) {
    if (cps.size() < static_cast<std::size_t>(n)) break;
    for (std::size_t i = 0; i + n <= cps.size(); ++i) ++g.chars[n - 1][cps.substr(i, n)];
  }
  for (const auto& w : split_words(text)) {
    if (decode_utf8(w).size() == 1) {
      ++g.words[w];
    } else if (is_chrf_punct(w.back())) {
      ++g.words[w.substr(0, w.size() - 1)];
      ++g.words[std::string(1, w.back())];
    } else if (is_chrf_punct(w.front())) {
      ++g.words[std::string(1, w.front())];
      ++g.words[w.substr(1)];
    } else {
      ++g.words[w];
    }
  }
  return g;
}

double chrf_from_stats(std::span<const OrderStats> stats) {
  const double factor = kChrfBeta * kChrfBeta;
  double avg_prec = 0.0;
  double avg_rec = 0.0;
  int effective_order = 0;
  for (const auto& s : stats) {
    if (s.hyp > 0 && s.ref > 0) {
      avg_prec += static_cast<double>(s.match) / s.hyp;
      avg_rec += static_cast<double>(s.match) / s.ref;
      ++effective_order;
    }
  }
  if (effective_order == 0) return 0.0;
  avg_prec /= effective_order;
  avg_rec /= effective_order;
  if (avg_prec + avg_rec == 0.0) return 0.0;
  return (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec);
}

double chrf_pair(const ChrfGrams& hyp, const ChrfGrams& ref) {
  if (hyp.empty && ref.empty) return 1.0;
  std::array<OrderStats, kCharOrder + 1> stats;
  for (int n = 0; n < kCharOrder; ++n) stats[n] = match_stats(hyp.chars[n], ref.chars[n]);
  stats[kCharOrder] = match_stats(hyp.words, ref.words);
  return chrf_from_stats(stats);
}

// ---- BLEU ----

constexpr int kBleuOrder = 4;

Counts<std::string> word_ngrams(const std::vector<std::string>& words, int n) {
  Counts<std::string> counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::string key = words[i];
    for (int k = 1; k < n; ++k) {
      key.push_back('\x1f');
      key += words[i + k];
    }
    ++counts[key];
  }
  return counts;
}

// ---- METEOR alignment search ----

constexpr long kMeteorNodeBudget = 2'000'000;

class ChunkSearch {
 public:
  ChunkSearch(std::vector<int> hyp, std::vector<int> ref, int vocab) : hyp_(std::move(hyp)), ref_(std::move(ref)) {
    positions_.resize(vocab);
    for (std::size_t j = 0; j < ref_.size(); ++j) positions_[ref_[j]].push_back(static_cast<int>(j));
    std::vector<int> hyp_count(vocab, 0);
    for (int w : hyp_) ++hyp_count[w];
    skips_.resize(vocab);
    matches_ = 0;
    for (int w = 0; w < vocab; ++w) {
      int m = std::min<int>(hyp_count[w], static_cast<int>(positions_[w].size()));
      matches_ += m;
      skips_[w] = hyp_count[w] - m;
    }
    matchable_after_.assign(hyp_.size() + 1, 0);
    for (std::size_t i = hyp_.size(); i-- > 0;) {
      matchable_after_[i] = matchable_after_[i + 1] + (positions_[hyp_[i]].empty() ? 0 : 1);
    }
    used_.assign(ref_.size(), 0);
  }

  MeteorAlignment run() {
    MeteorAlignment a;
    a.hyp_length = hyp_.size();
    a.ref_length = ref_.size();
    a.matches = static_cast<std::size_t>(matches_);
    if (matches_ == 0) {
      a.chunks = 0;
      return a;
    }
    dfs(0, -1, 0);
    a.chunks = static_cast<std::size_t>(matches_ - best_links_);
    a.exhaustive = !exhausted_;
    return a;
  }

 private:
  void dfs(std::size_t i, int prev, int links) {
    if (exhausted_) return;
    if (++nodes_ > kMeteorNodeBudget && best_links_ >= 0) {
      exhausted_ = true;
      return;
    }
    if (i == hyp_.size()) {
      best_links_ = std::max(best_links_, links);
      return;
    }
    if (links + matchable_after_[i] <= best_links_) return;
    const int w = hyp_[i];
    const auto& candidates = positions_[w];
    if (candidates.empty()) {
      dfs(i + 1, -1, links);
      return;
    }
    const int next = prev + 1;
    if (prev >= 0 && next < static_cast<int>(ref_.size()) && ref_[next] == w && !used_[next]) {
      used_[next] = 1;
      dfs(i + 1, next, links + 1);
      used_[next] = 0;
    }
    for (int j : candidates) {
      if (used_[j] || (prev >= 0 && j == next)) continue;
      used_[j] = 1;
      dfs(i + 1, j, links);
      used_[j] = 0;
    }
    if (skips_[w] > 0) {
      --skips_[w];
      dfs(i + 1, -1, links);
      ++skips_[w];
    }
  }

  std::vector<int> hyp_;
  std::vector<int> ref_;
  std::vector<std::vector<int>> positions_;
  std::vector<int> skips_;
  std::vector<int> matchable_after_;
  std::vector<char> used_;
  int matches_ = 0;
  int best_links_ = -1;
  long nodes_ = 0;
  bool exhausted_ = false;
};

}  // namespace

std::string_view name_of(QualityMetric metric) {
  switch (metric) {
    case QualityMetric::chrf_plus: return "chrf_plus";
    case QualityMetric::token_f1: return "token_f1";
    case QualityMetric::exact_match: return "exact_match";
    case QualityMetric::bleu: return "bleu";
    case QualityMetric::meteor_lite: return "meteor_lite";
  }
  return "unknown";
}

std::optional<QualityMetric> parse_quality_metric(std::string_view name) {
  for (auto m : kQualityMetrics) {
    if (name_of(m) == name) return m;
  }
  return std::nullopt;
}

std::span<const QualityMetric> all_quality_metrics() { return kQualityMetrics; }

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out.push_back(' ');
    out += ascii_lower(w);
  }
  return out;
}

QualityScore exact_match(std::string_view hyp, std::span<const std::string> refs) {
  const std::string h = normalize_answer(hyp);
  for (const auto& r : refs) {
    if (normalize_answer(r) == h) return {QualityMetric::exact_match, 1.0};
  }
  return {QualityMetric::exact_match, 0.0};
}

QualityScore token_f1(std::string_view hyp, std::span<const std::string> refs) {
  const auto h = lowered_words(hyp);
  Counts<std::string> hyp_counts;
  for (const auto& w : h) ++hyp_counts[w];
  double best = 0.0;
  for (const auto& ref : refs) {
    const auto r = lowered_words(ref);
    double f1 = 0.0;
    if (h.empty() || r.empty()) {
      f1 = (h.empty() && r.empty()) ? 1.0 : 0.0;
    } else {
      Counts<std::string> ref_counts;
      for (const auto& w : r) ++ref_counts[w];
      int overlap = match_stats(hyp_counts, ref_counts).match;
      if (overlap > 0) {
        double p = static_cast<double>(overlap) / h.size();
        double rc = static_cast<double>(overlap) / r.size();
        f1 = 2.0 * p * rc / (p + rc);
      }
    }
    best = std::max(best, f1);
  }
  return {QualityMetric::token_f1, best};
}

QualityScore chrf_plus(std::string_view hyp, std::span<const std::string> refs) {
  const auto h = chrf_grams(hyp);
  double best = 0.0;
  for (const auto& r : refs) best = std::max(best, chrf_pair(h, chrf_grams(r)));
  return {QualityMetric::chrf_plus, best};
}

QualityScore chrf_plus(std::string_view hyp, std::string_view ref) {
  return {QualityMetric::chrf_plus, chrf_pair(chrf_grams(hyp), chrf_grams(ref))};
}

QualityScore sentence_bleu(std::string_view hyp, std::string_view ref) {
  const auto h = split_words(hyp);
  const auto r = split_words(ref);
  if (h.empty()) return {QualityMetric::bleu, r.empty() ? 1.0 : 0.0};

  std::array<double, kBleuOrder> correct{};
  std::array<double, kBleuOrder> total{};
  for (int n = 1; n <= kBleuOrder; ++n) {
    auto s = match_stats(word_ngrams(h, n), word_ngrams(r, n));
    correct[n - 1] = s.match;
    total[n - 1] = s.hyp;
  }
  if (correct[0] == 0.0) return {QualityMetric::bleu, 0.0};

  double log_sum = 0.0;
  for (int n = 1; n <= kBleuOrder; ++n) {
    double c = correct[n - 1];
    double t = total[n - 1];
    if (n > 1) {
      c += 1.0;
      t += 1.0;
    }
    log_sum += std::log(c / t);
  }
  double bp = 1.0;
  if (h.size() < r.size()) bp = std::exp(1.0 - static_cast<double>(r.size()) / static_cast<double>(h.size()));
  return {QualityMetric::bleu, bp * std::exp(log_sum / kBleuOrder)};
}

MeteorAlignment meteor_align(std::span<const std::string> hyp, std::span<const std::string> ref) {
  std::unordered_map<std::string, int> ids;
  auto id_of = [&](const std::string& w) {
    auto [it, inserted] = ids.emplace(w, static_cast<int>(ids.size()));
    return it->second;
  };
  std::vector<int> h, r;
  h.reserve(hyp.size());
  r.reserve(ref.size());
  for (const auto& w : hyp) h.push_back(id_of(w));
  for (const auto& w : ref) r.push_back(id_of(w));
  ChunkSearch search(std::move(h), std::move(r), static_cast<int>(ids.size()));
  return search.run();
}

QualityScore meteor_lite(std::string_view hyp, std::string_view ref) {
  const auto h = lowered_words(hyp);
  const auto r = lowered_words(ref);
  const auto a = meteor_align(h, r);
  if (a.matches == 0) return {QualityMetric::meteor_lite, 0.0};
  const double m = static_cast<double>(a.matches);
  const double precision = m / static_cast<double>(a.hyp_length);
  const double recall = m / static_cast<double>(a.ref_length);
  const double fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
  const double frag = static_cast<double>(a.chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return {QualityMetric::meteor_lite, fmean * (1.0 - penalty)};
}

QualityScore quality(QualityMetric metric, std::string_view hyp, std::span<const std::string> refs) {
  if (refs.empty()) throw Error("quality requires at least one reference");
  switch (metric) {
    case QualityMetric::chrf_plus: return chrf_plus(hyp, refs);
    case QualityMetric::token_f1: return token_f1(hyp, refs);
    case QualityMetric::exact_match: return exact_match(hyp, refs);
    case QualityMetric::bleu:
    case QualityMetric::meteor_lite: {
      double best = 0.0;
      for (const auto& r : refs) {
        best = std::max(best, metric == QualityMetric::bleu ? sentence_bleu(hyp, r).value : meteor_lite(hyp, r).value);
      }
      return {metric, best};
    }
  }
  throw Error("unknown quality metric");
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error("cosine similarity: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                std::to_string(v.size()) + ")");
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw Error("cosine similarity: zero-norm vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

}  // namespace confcorr
