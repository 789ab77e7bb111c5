#include "flashtrace/tasks.hpp"

#include <algorithm>
#include <array>

namespace flashtrace {

namespace {

constexpr std::array<const char*, 2> kReserved = {"<mask>", "<unk>"};
constexpr std::array<const char*, 6> kNeedleWords = {"The", "special", "magic", "number", "for", "is"};
constexpr std::array<const char*, 3> kQueryWords = {"What", "the", "?"};
constexpr std::array<const char*, 12> kKeys = {"apple",   "comet",   "falcon", "harbor",
                                               "jasmine", "lantern", "meadow", "nickel",
                                               "orbit",   "pepper",  "quartz", "saffron"};
constexpr std::array<const char*, 16> kValues = {"1024", "2718", "3141", "4096", "5077", "6180",
                                                 "7352", "8128", "9001", "1337", "2468", "3579",
                                                 "4812", "5923", "6034", "7145"};
constexpr std::array<const char*, 2> kAssignWords = {"VAR", "="};
constexpr std::array<const char*, 2> kVtQueryWords = {"value", "of"};
constexpr std::array<const char*, 16> kNames = {"ALPHA", "BRAVO", "CHARLIE", "DELTA",  "ECHO",    "FOXTROT",
                                                "GOLF",  "HOTEL", "INDIA",   "JULIET", "KILO",    "LIMA",
                                                "MIKE",  "NOVEMBER", "OSCAR", "PAPA"};
constexpr std::array<const char*, 40> kFiller = {
    "river", "stone",  "quiet",  "morning", "paper",  "garden", "window", "yellow", "market", "silver",
    "cloud", "bridge", "simple", "orange",  "travel", "forest", "winter", "kitchen", "letter", "music",
    "soft",  "little", "open",   "road",    "green",  "table",  "light",  "small",  "warm",   "water",
    "bright", "old",   "city",   "field",   "north",  "piano",  "tree",   "boat",   "glass",  "house"};
constexpr const char* kPeriod = ".";
constexpr std::array<const char*, 12> kReasoningPool = {"let",  "me",   "scan",   "context", "step", "check",
                                                        "next", "then", "so",     "recall",  "ok",   "hmm"};
constexpr std::array<const char*, 2> kReasoningMarkers = {"located", "recalled"};
constexpr const char* kAnswerWord = "answer";

constexpr std::size_t kNeedleLen = 8;   // The special magic number for KEY is VALUE
constexpr std::size_t kNiahQueryLen = 9;  // What is the special magic number for KEY ?
constexpr std::size_t kStatementLen = 4;  // VAR NAME = VALUE|NAME
constexpr std::size_t kVtQueryLen = 8;    // What is the value of VAR NAME ?

using Words = std::vector<std::string>;

std::string join(const Words& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

/// Filler sentences (words then a period) totalling exactly `total` tokens.
std::vector<Words> filler_sentences(Rng& rng, std::size_t total) {
  std::vector<Words> out;
  std::size_t left = total;
  while (left > 0) {
    std::size_t len;
    if (left <= 12) {
      len = left;
    } else if (left < 16) {
      len = left / 2;  // avoid a one-token tail
    } else {
      len = rng.between(4, 12);
    }
    Words s;
    for (std::size_t i = 0; i + 1 < len; ++i) s.emplace_back(kFiller[rng.below(kFiller.size())]);
    s.emplace_back(kPeriod);
    out.push_back(std::move(s));
    left -= len;
  }
  return out;
}

/// Drops each insert at a uniformly drawn sentence boundary, keeping the
/// inserts' relative order. Returns the words and the [begin, end) range of
/// every insert in input order.
std::pair<Words, std::vector<IndexRange>> interleave(Rng& rng, const std::vector<Words>& sentences,
                                                     const std::vector<Words>& inserts) {
  std::vector<std::size_t> slot(inserts.size());
  for (auto& s : slot) s = rng.below(sentences.size() + 1);
  std::sort(slot.begin(), slot.end());

  Words words;
  std::vector<IndexRange> ranges;
  std::size_t next = 0;
  for (std::size_t b = 0; b <= sentences.size(); ++b) {
    for (; next < inserts.size() && slot[next] == b; ++next) {
      const std::size_t start = words.size();
      words.insert(words.end(), inserts[next].begin(), inserts[next].end());
      ranges.push_back({start, words.size()});
    }
    if (b < sentences.size()) words.insert(words.end(), sentences[b].begin(), sentences[b].end());
  }
  return {std::move(words), std::move(ranges)};
}

template <std::size_t N>
Words sample_without_replacement(Rng& rng, const std::array<const char*, N>& pool, std::size_t k) {
  Words all(pool.begin(), pool.end());
  rng.shuffle(all);
  all.resize(k);
  return all;
}

void finish(Sample& s, const Words& words) {
  s.input_text = join(words);
  auto enc = Vocabulary::standard().tokenize(s.input_text);
  s.input_tokens = std::move(enc.ids);
}

}  // namespace

Vocabulary::Vocabulary() {
  auto add = [this](const char* w) {
    const auto id = static_cast<TokenId>(words_.size());
    if (!index_.emplace(w, id).second) throw Error(Errc::invalid_argument, std::string("duplicate word ") + w);
    words_.emplace_back(w);
  };
  for (auto w : kReserved) add(w);
  for (auto w : kNeedleWords) add(w);
  for (auto w : kQueryWords) add(w);
  for (auto w : kKeys) add(w);
  for (auto w : kValues) add(w);
  for (auto w : kAssignWords) add(w);
  for (auto w : kVtQueryWords) add(w);
  for (auto w : kNames) add(w);
  for (auto w : kFiller) add(w);
  add(kPeriod);
  for (auto w : kReasoningPool) add(w);
  for (auto w : kReasoningMarkers) add(w);
  add(kAnswerWord);
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab;
  return vocab;
}

Vocabulary::Encoded Vocabulary::tokenize(std::string_view text) const {
  Encoded out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) {
      auto it = index_.find(std::string(text.substr(i, j - i)));
      if (it == index_.end()) {
        out.ids.push_back(kUnknownToken);
        ++out.unknown;
      } else {
        out.ids.push_back(it->second);
      }
    }
    i = j;
  }
  return out;
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += word(ids[i]);
  }
  return out;
}

TokenId Vocabulary::id(std::string_view w) const {
  auto it = index_.find(std::string(w));
  if (it == index_.end()) throw Error(Errc::out_of_range, "word not in vocabulary: " + std::string(w));
  return it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id >= words_.size()) throw Error(Errc::out_of_range, "token id " + std::to_string(id));
  return words_[id];
}

std::vector<TokenId> Vocabulary::evidence_ids() const {
  std::vector<TokenId> out;
  for (auto w : kNeedleWords) out.push_back(id(w));
  for (auto w : kKeys) out.push_back(id(w));
  for (auto w : kValues) out.push_back(id(w));
  for (auto w : kAssignWords) out.push_back(id(w));
  for (auto w : kNames) out.push_back(id(w));
  return out;
}

std::vector<TokenId> Vocabulary::reasoning_marker_ids() const {
  std::vector<TokenId> out;
  for (auto w : kReasoningMarkers) out.push_back(id(w));
  return out;
}

std::vector<TokenId> Vocabulary::output_ids() const {
  std::vector<TokenId> out{id(kAnswerWord)};
  for (auto w : kValues) out.push_back(id(w));
  return out;
}

std::string_view task_name(TaskKind kind) { return kind == TaskKind::niah ? "niah" : "vt"; }

TaskKind task_from_name(std::string_view name) {
  if (name == "niah") return TaskKind::niah;
  if (name == "vt") return TaskKind::vt;
  throw Error(Errc::bad_config, "unknown task kind '" + std::string(name) + "'");
}

std::vector<std::size_t> ground_truth_indices(const Sample& sample) {
  std::vector<std::size_t> out;
  for (const auto& r : sample.ground_truth) {
    for (std::size_t i = r.begin; i < r.end; ++i) out.push_back(i);
  }
  return out;
}

Sample gen_niah(std::size_t context_len, std::size_t n_needles, std::uint64_t seed) {
  if (n_needles == 0) throw Error(Errc::invalid_argument, "need at least one needle");
  if (n_needles > kKeys.size()) {
    throw Error(Errc::infeasible, "at most " + std::to_string(kKeys.size()) + " needles");
  }
  const std::size_t fixed = n_needles * (kNeedleLen + kNiahQueryLen);
  if (context_len < fixed) {
    throw Error(Errc::infeasible, "context of " + std::to_string(context_len) + " tokens cannot hold " +
                                      std::to_string(n_needles) + " needles and their queries");
  }
  Rng rng(mix_seed(seed, 0x4e494148));
  Sample s;
  s.kind = TaskKind::niah;
  s.seed = seed;

  const Words keys = sample_without_replacement(rng, kKeys, n_needles);
  const Words values = sample_without_replacement(rng, kValues, n_needles);
  std::vector<Words> needles;
  for (std::size_t k = 0; k < n_needles; ++k) {
    needles.push_back({"The", "special", "magic", "number", "for", keys[k], "is", values[k]});
  }
  const auto sentences = filler_sentences(rng, context_len - fixed);
  auto [words, ranges] = interleave(rng, sentences, needles);
  // interleave keeps needle order, so ranges[k] belongs to keys[k]
  s.ground_truth = ranges;

  Words query;
  for (std::size_t k = 0; k < n_needles; ++k) {
    Words q{"What", "is", "the", "special", "magic", "number", "for", keys[k], "?"};
    query.insert(query.end(), q.begin(), q.end());
  }
  s.query_text = join(query);
  words.insert(words.end(), query.begin(), query.end());
  Words answer(values.begin(), values.end());
  s.expected_answer = join(answer);
  finish(s, words);
  return s;
}

Sample gen_vt(std::size_t hops, std::size_t chains, std::size_t context_len, std::uint64_t seed) {
  if (hops == 0 || chains == 0) throw Error(Errc::invalid_argument, "hops and chains must be >= 1");
  if (hops * chains > kNames.size() || chains > kValues.size()) {
    throw Error(Errc::infeasible, "not enough variable names for " + std::to_string(chains) +
                                      " chains of " + std::to_string(hops));
  }
  const std::size_t fixed = hops * chains * kStatementLen + kVtQueryLen;
  if (context_len < fixed) {
    throw Error(Errc::infeasible, "context of " + std::to_string(context_len) + " tokens too short");
  }
  Rng rng(mix_seed(seed, 0x5654));
  Sample s;
  s.kind = TaskKind::vt;
  s.seed = seed;

  // Names and values are drawn without replacement, so chains never collide.
  const Words names = sample_without_replacement(rng, kNames, hops * chains);
  const Words values = sample_without_replacement(rng, kValues, chains);
  auto name = [&](std::size_t c, std::size_t h) { return names[c * hops + h]; };
  auto statement = [&](std::size_t c, std::size_t h) -> Words {
    return {"VAR", name(c, h), "=", h == 0 ? values[c] : name(c, h - 1)};
  };

  // Each chain's statements stay in definition order; chains interleave.
  std::vector<std::size_t> chain_order;
  for (std::size_t c = 0; c < chains; ++c) chain_order.insert(chain_order.end(), hops, c);
  rng.shuffle(chain_order);
  std::vector<Words> inserts;
  std::vector<std::size_t> owner;
  std::vector<std::size_t> emitted(chains, 0);
  for (std::size_t c : chain_order) {
    inserts.push_back(statement(c, emitted[c]++));
    owner.push_back(c);
  }
  const auto sentences = filler_sentences(rng, context_len - fixed);
  auto [words, ranges] = interleave(rng, sentences, inserts);
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    if (owner[k] == 0) s.ground_truth.push_back(ranges[k]);
  }
  Words query{"What", "is", "the", "value", "of", "VAR", name(0, hops - 1), "?"};
  s.query_text = join(query);
  words.insert(words.end(), query.begin(), query.end());
  s.expected_answer = values[0];
  finish(s, words);
  return s;
}

Assembled assemble(const Sample& sample, std::string_view reasoning_text, std::string_view output_text) {
  const auto& vocab = Vocabulary::standard();
  auto think = vocab.tokenize(reasoning_text);
  auto out = vocab.tokenize(output_text);
  if (out.ids.empty()) throw Error(Errc::invalid_argument, "output segment is empty");
  if (sample.input_tokens.empty()) throw Error(Errc::invalid_argument, "input segment is empty");
  Assembled a;
  a.tokens = sample.input_tokens;
  a.tokens.insert(a.tokens.end(), think.ids.begin(), think.ids.end());
  a.tokens.insert(a.tokens.end(), out.ids.begin(), out.ids.end());
  a.segments = {sample.input_tokens.size(), sample.input_tokens.size() + think.ids.size(), a.tokens.size()};
  a.unknown_words = think.unknown + out.unknown;
  return a;
}

Script script_reasoning(const Sample& sample, std::size_t length, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x524541));
  Words think;
  for (std::size_t i = 0; i < length; ++i) think.emplace_back(kReasoningPool[rng.below(kReasoningPool.size())]);
  if (length > 0) {
    const std::size_t markers = std::max<std::size_t>(1, length / 16);
    std::vector<std::size_t> pos(length);
    for (std::size_t i = 0; i < length; ++i) pos[i] = i;
    rng.shuffle(pos);
    for (std::size_t m = 0; m < markers; ++m) think[pos[m]] = kReasoningMarkers[m % kReasoningMarkers.size()];
  }
  return {join(think), std::string(kAnswerWord) + " " + sample.expected_answer};
}

nlohmann::json sample_to_json(const Sample& s) {
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& r : s.ground_truth) spans.push_back({r.begin, r.end});
  return {{"version", kSampleSchemaVersion},
          {"task", task_name(s.kind)},
          {"seed", s.seed},
          {"input_text", s.input_text},
          {"input_tokens", s.input_tokens},
          {"ground_truth_spans", spans},
          {"query_text", s.query_text},
          {"expected_answer", s.expected_answer}};
}

Sample sample_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kSampleSchemaVersion) {
      throw Error(Errc::unsupported_version, "sample schema version " + j.at("version").dump());
    }
    Sample s;
    s.kind = task_from_name(j.at("task").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    s.input_text = j.at("input_text").get<std::string>();
    s.input_tokens = j.at("input_tokens").get<std::vector<TokenId>>();
    for (const auto& span : j.at("ground_truth_spans")) {
      s.ground_truth.push_back({span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>()});
    }
    s.query_text = j.at("query_text").get<std::string>();
    s.expected_answer = j.at("expected_answer").get<std::string>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::bad_config, std::string("malformed sample: ") + e.what());
  }
}

}  // namespace flashtrace
