#include <algorithm>
#include <array>
#include <set>

#include "dialcal/pipeline.hpp"

namespace dialcal {

SyntheticTask synthetic_task_from_string(const std::string& s) {
  if (s == "copy") return SyntheticTask::kCopy;
  if (s == "template_qa") return SyntheticTask::kTemplateQa;
  throw ConfigError("unknown synthetic task '" + s + "' (expected copy or template_qa)");
}

namespace {

const std::vector<std::string> kWords = {
    "back",  "pain",  "sleep", "walk",  "rest",   "neck",  "knee",  "stretch", "water", "diet",  "muscle", "joint",
    "spine", "heat",  "ice",   "yoga",  "chair",  "desk",  "bed",   "stress",  "mood",  "work",  "lift",   "bend",
    "run",   "swim",  "relax", "sore",  "stiff",  "ache",  "calm",  "light",   "short", "daily", "gentle", "strong",
    "slow",  "warm",  "cold",  "early", "late",   "hour",  "week",  "doctor",  "nurse", "friend", "family", "food",
    "fruit", "bread", "tea",   "milk",  "salt",   "sugar", "shoe",  "floor",   "pillow", "mat",  "ball",   "band"};

struct Slot {
  std::string symptom;
  std::string part;
  std::string activity;
};

const std::vector<std::string> kSymptoms = {"pain", "stiffness", "aching", "soreness", "numbness", "cramps"};
const std::vector<std::string> kParts = {"back", "neck", "shoulder", "knee", "hip", "ankle"};
const std::vector<std::string> kActivities = {"running", "lifting", "sitting", "cycling", "gardening", "swimming"};
// Indexed by symptom.
const std::vector<std::string> kAdvice = {"rest and apply ice",     "stretch gently every hour",
                                          "use a warm compress",    "try a light massage",
                                          "keep moving and stretch", "drink water and rest"};

std::string render_query(int form, const Slot& s) {
  switch (form) {
    case 0: return "I have " + s.symptom + " in my " + s.part + " after " + s.activity + ". What should I do?";
    case 1: return "Why is there " + s.symptom + " in my " + s.part + " when I am " + s.activity + "?";
    default: return "How can I reduce the " + s.symptom + " in my " + s.part + "?";
  }
}

std::string render_reply(int form, const Slot& s, const std::string& advice) {
  switch (form) {
    case 0: return advice + ", and avoid " + s.activity + " until your " + s.part + " feels better.";
    case 1: return s.activity + " can strain your " + s.part + ". " + advice + ".";
    default: return advice + " to ease the " + s.symptom + " in your " + s.part + ".";
  }
}

std::size_t template_vocab_size(std::size_t k) {
  std::set<std::string> vocab;
  for (int form = 0; form < 3; ++form)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        for (std::size_t c = 0; c < k; ++c) {
          const Slot s{kSymptoms[a], kParts[b], kActivities[c]};
          for (auto& t : tokenize(render_query(form, s))) vocab.insert(t);
          for (auto& t : tokenize(render_reply(form, s, kAdvice[a]))) vocab.insert(t);
        }
  return vocab.size();
}

}  // namespace

std::vector<DialoguePair> generate_synthetic_corpus(std::size_t n_pairs, std::size_t vocab_size_bound,
                                                    std::uint64_t seed, SyntheticTask task) {
  if (n_pairs < 2) throw ConfigError("a synthetic corpus needs at least 2 pairs");
  Rng rng(seed);
  std::vector<DialoguePair> pairs;
  pairs.reserve(n_pairs);

  if (task == SyntheticTask::kCopy) {
    const std::size_t pool = std::min(vocab_size_bound, kWords.size());
    if (pool < 2) throw ConfigError("copy task needs a vocabulary bound of at least 2");
    for (std::size_t i = 0; i < n_pairs; ++i) {
      // Distinct words per utterance: partial shuffle of the pool.
      const std::size_t len = std::min<std::size_t>(3 + rng.below(4), pool);
      std::vector<std::size_t> idx(pool);
      for (std::size_t k = 0; k < pool; ++k) idx[k] = k;
      std::vector<std::string> words;
      for (std::size_t k = 0; k < len; ++k) {
        std::swap(idx[k], idx[k + rng.below(pool - k)]);
        words.push_back(kWords[idx[k]]);
      }
      const std::string text = join_tokens(words);
      pairs.push_back({text, text});
    }
    return pairs;
  }

  std::size_t k = kSymptoms.size();
  while (k >= 2 && template_vocab_size(k) > vocab_size_bound) --k;
  if (k < 2)
    throw ConfigError("template_qa needs a vocabulary bound of at least " + std::to_string(template_vocab_size(2)));
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const int form = static_cast<int>(rng.below(3));
    const std::size_t a = rng.below(k), b = rng.below(k), c = rng.below(k);
    const Slot s{kSymptoms[a], kParts[b], kActivities[c]};
    pairs.push_back({render_query(form, s), render_reply(form, s, kAdvice[a])});
  }
  return pairs;
}

}  // namespace dialcal
