#include "dualroute/synthgen.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>

#include "dualroute/common.hpp"
#include "dualroute/rng.hpp"
#include "dualroute/targets.hpp"

namespace dualroute {

void GenConfig::validate() const {
  if (n_instances < 0) throw ConfigError("n_instances must be >= 0");
  if (p_text_question < 0.0 || p_text_question > 1.0) {
    throw ConfigError("p_text_question must be in [0,1]");
  }
  if (annotator_noise < 0.0 || annotator_noise > 1.0) {
    throw ConfigError("annotator_noise must be in [0,1]");
  }
  if (max_answer_tokens < 1) throw ConfigError("max_answer_tokens must be >= 1");
  if (max_objects < 1) throw ConfigError("max_objects must be >= 1");
  if (max_distractor_ocr < 0) throw ConfigError("max_distractor_ocr must be >= 0");
  if (colors.empty() || shapes.empty()) throw ConfigError("attribute inventories must not be empty");
  if (static_cast<int>(ocr_lexicon.size()) < max_answer_tokens + 1) {
    throw ConfigError("ocr_lexicon too small for max_answer_tokens");
  }
}

GenConfig GenConfig::from_kv(const KvFile& kv) {
  GenConfig c;
  c.n_instances = static_cast<int>(kv.get_int("n_instances", c.n_instances));
  c.p_text_question = kv.get_double("p_text_question", c.p_text_question);
  c.annotator_noise = kv.get_double("annotator_noise", c.annotator_noise);
  c.max_answer_tokens = static_cast<int>(kv.get_int("max_answer_tokens", c.max_answer_tokens));
  c.seed = static_cast<std::uint64_t>(kv.get_int("gen_seed", kv.get_int("seed", static_cast<std::int64_t>(c.seed))));
  c.max_objects = static_cast<int>(kv.get_int("max_objects", c.max_objects));
  c.max_distractor_ocr = static_cast<int>(kv.get_int("max_distractor_ocr", c.max_distractor_ocr));
  c.colors = kv.get_words("colors", c.colors);
  c.shapes = kv.get_words("shapes", c.shapes);
  c.ocr_lexicon = kv.get_words("ocr_lexicon", c.ocr_lexicon);
  c.validate();
  return c;
}

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Deterministic unit-scale embedding of a word, used for both the object
// attribute encoding and the FastText stand-in.
Vec word_vector(const std::string& word, int dim, std::uint64_t salt) {
  Rng rng(mix_seed(hash_str(word), salt));
  Vec v(dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int i = 0; i < dim; ++i) v[i] = scale * rng.gaussian();
  return v;
}

Vec fasttext_standin(const std::string& text, int dim) {
  return word_vector(lower(text), dim, 0x66746578ULL);
}

// Character n-gram (1- and 2-gram) count vector, hashed into dim bins.
Vec phoc_standin(const std::string& text, int dim) {
  Vec v = Vec::Zero(dim);
  const std::string t = lower(text);
  for (std::size_t i = 0; i < t.size(); ++i) {
    v[static_cast<int>(hash_str(t.substr(i, 1)) % static_cast<std::uint64_t>(dim))] += 1.0;
    if (i + 1 < t.size()) {
      v[static_cast<int>(hash_str(t.substr(i, 2)) % static_cast<std::uint64_t>(dim))] += 1.0;
    }
  }
  return v;
}

// Appearance stand-in: noise whose mean tracks the box geometry.
Vec appearance_standin(const Eigen::Vector4d& box, int dim, Rng& rng) {
  Vec v(dim);
  for (int i = 0; i < dim; ++i) {
    v[i] = box[i % 4] + 0.5 * rng.gaussian();
  }
  return v;
}

OCRTokenRecord make_ocr_token(const std::string& text, const Eigen::Vector4d& box,
                              const ModelConfig& dims, Rng& rng) {
  OCRTokenRecord rec;
  rec.text = text;
  rec.x_ft = fasttext_standin(text, dims.D_ft);
  rec.x_p = phoc_standin(text, dims.D_p);
  rec.x_fr = appearance_standin(box, dims.D_fr, rng);
  rec.x_spt = box;
  return rec;
}

Eigen::Vector4d clamp_box(double x0, double y0, double x1, double y1) {
  const auto cl = [](double v) { return std::min(std::max(v, 0.0), 1.0); };
  Eigen::Vector4d b;
  b << cl(x0), cl(y0), cl(std::max(x1, x0)), cl(std::max(y1, y0));
  return b;
}

struct SceneObject {
  std::string shape;
  std::string color;
};

Vec object_feature(const SceneObject& obj, const ModelConfig& dims, Rng& rng) {
  const int half = dims.D_obj / 2;
  Vec v(dims.D_obj);
  v.head(half) = word_vector(obj.shape, half, 0x736861ULL);
  v.tail(dims.D_obj - half) = word_vector(obj.color, dims.D_obj - half, 0x636f6cULL);
  for (int i = 0; i < dims.D_obj; ++i) v[i] += 0.05 * rng.gaussian();
  return v;
}

std::string maybe_capitalized(const std::string& s, Rng& rng) {
  if (s.empty() || !rng.bernoulli(0.3)) return s;
  std::string out = s;
  out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace

std::vector<std::string> emit_candidate_set(const GenConfig& config) {
  std::set<std::string> lexicon;
  for (const auto& w : config.ocr_lexicon) lexicon.insert(normalize_answer(w));
  std::set<std::string> out;
  for (const auto& c : config.colors) out.insert(normalize_answer(c));
  out.insert("yes");
  out.insert("no");
  for (int n = 0; n <= config.max_objects; ++n) out.insert(std::to_string(n));
  for (const auto& w : lexicon) out.erase(w);
  return {out.begin(), out.end()};
}

std::vector<VQAInstance> generate(const GenConfig& config, const ModelConfig& dims) {
  config.validate();
  dims.validate();
  if (config.max_answer_tokens > dims.T - 1) {
    throw ConfigError("max_answer_tokens must be <= T-1");
  }
  if (config.max_objects > dims.E) throw ConfigError("max_objects must be <= E");
  if (config.max_answer_tokens + config.max_distractor_ocr > dims.M) {
    throw ConfigError("sign + distractor tokens must fit into M");
  }

  std::vector<VQAInstance> out;
  out.reserve(static_cast<std::size_t>(config.n_instances));
  for (int index = 0; index < config.n_instances; ++index) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(index) + 1));
    VQAInstance inst;
    char idbuf[48];
    std::snprintf(idbuf, sizeof(idbuf), "i%llu-%06d",
                  static_cast<unsigned long long>(config.seed), index);
    inst.instance_id = idbuf;

    const bool text_question = rng.bernoulli(config.p_text_question);
    std::string true_answer;
    std::vector<std::string> answer_words;  // family (b) only

    if (!text_question) {
      // --- family (a): scene question ------------------------------------
      const int n_obj = rng.uniform_int(1, config.max_objects);
      std::vector<SceneObject> objects;
      const double roll = rng.uniform();
      if (roll < 0.40) {
        // color question about a shape that occurs exactly once
        const std::string target_shape = rng.pick(config.shapes);
        const std::string target_color = rng.pick(config.colors);
        objects.push_back({target_shape, target_color});
        for (int i = 1; i < n_obj; ++i) {
          std::string s = rng.pick(config.shapes);
          while (s == target_shape) s = rng.pick(config.shapes);
          objects.push_back({s, rng.pick(config.colors)});
        }
        rng.shuffle(objects);
        inst.question_words = {"what", "color", "is", "the", target_shape};
        true_answer = target_color;
        inst.answer_type = AnswerType::kOther;
      } else if (roll < 0.75) {
        // existence question, positive half the time
        for (int i = 0; i < n_obj; ++i) {
          objects.push_back({rng.pick(config.shapes), rng.pick(config.colors)});
        }
        const bool positive = rng.bernoulli(0.5);
        std::string qc, qs;
        if (positive) {
          const SceneObject& o = objects[static_cast<std::size_t>(rng.uniform_int(0, n_obj - 1))];
          qc = o.color;
          qs = o.shape;
        } else {
          // find a (color, shape) pair not in the scene
          for (int attempt = 0; attempt < 64; ++attempt) {
            qc = rng.pick(config.colors);
            qs = rng.pick(config.shapes);
            bool present = false;
            for (const auto& o : objects) present = present || (o.color == qc && o.shape == qs);
            if (!present) break;
            if (attempt == 63) {
              qc = config.colors[0];
              qs = config.shapes[0];
            }
          }
        }
        bool present = false;
        for (const auto& o : objects) present = present || (o.color == qc && o.shape == qs);
        inst.question_words = {"is", "there", "a", qc, qs};
        true_answer = present ? "yes" : "no";
        inst.answer_type = AnswerType::kYesNo;
      } else {
        // count question; sometimes about an absent shape
        for (int i = 0; i < n_obj; ++i) {
          objects.push_back({rng.pick(config.shapes), rng.pick(config.colors)});
        }
        std::string qs;
        if (rng.bernoulli(0.75)) {
          qs = objects[static_cast<std::size_t>(rng.uniform_int(0, n_obj - 1))].shape;
        } else {
          std::set<std::string> present;
          for (const auto& o : objects) present.insert(o.shape);
          std::vector<std::string> absent;
          for (const auto& s : config.shapes) {
            if (present.count(s) == 0) absent.push_back(s);
          }
          qs = absent.empty() ? objects[0].shape : rng.pick(absent);
        }
        int count = 0;
        for (const auto& o : objects) count += o.shape == qs ? 1 : 0;
        inst.question_words = {"how", "many", qs, "are", "there"};
        true_answer = std::to_string(count);
        inst.answer_type = AnswerType::kNumber;
      }

      for (const auto& o : objects) {
        inst.object_features.push_back(object_feature(o, dims, rng));
        // attribute-augmented detector tags, one color + shape pair per object
        inst.object_tags.push_back(o.color);
        inst.object_tags.push_back(o.shape);
      }

      // scene texture: a few OCR tokens that are irrelevant to the answer
      const int n_ocr = rng.uniform_int(0, config.max_distractor_ocr);
      for (int i = 0; i < n_ocr; ++i) {
        const std::string word = rng.pick(config.ocr_lexicon);
        const double x0 = rng.uniform(0.0, 0.8);
        const double y0 = rng.uniform(0.35, 0.85);
        const Eigen::Vector4d box = clamp_box(x0, y0, x0 + 0.15, y0 + 0.08);
        inst.ocr_tokens.push_back(make_ocr_token(word, box, dims, rng));
      }
    } else {
      // --- family (b): sign-reading question -------------------------------
      const int L = rng.uniform_int(1, config.max_answer_tokens);
      std::vector<std::string> pool = config.ocr_lexicon;
      rng.shuffle(pool);
      answer_words.assign(pool.begin(), pool.begin() + L);
      const int n_distract = rng.uniform_int(0, config.max_distractor_ocr);
      std::vector<std::string> distractors(
          pool.begin() + L, pool.begin() + L + std::min<std::size_t>(
                                                  static_cast<std::size_t>(n_distract),
                                                  pool.size() - static_cast<std::size_t>(L)));

      // sign tokens first, in reading order
      for (int i = 0; i < L; ++i) {
        const double slot = 1.0 / static_cast<double>(L);
        const double x0 = i * slot + 0.05 * slot * rng.uniform();
        const double y0 = rng.uniform(0.05, 0.30);
        const Eigen::Vector4d box = clamp_box(x0, y0, x0 + 0.6 * slot, y0 + 0.10);
        inst.ocr_tokens.push_back(make_ocr_token(answer_words[static_cast<std::size_t>(i)], box, dims, rng));
      }
      for (const auto& word : distractors) {
        const double x0 = rng.uniform(0.0, 0.8);
        const double y0 = rng.uniform(0.55, 0.85);
        const Eigen::Vector4d box = clamp_box(x0, y0, x0 + 0.15, y0 + 0.08);
        inst.ocr_tokens.push_back(make_ocr_token(word, box, dims, rng));
      }

      // scene objects as texture
      const int n_obj = rng.uniform_int(1, std::min(3, config.max_objects));
      for (int i = 0; i < n_obj; ++i) {
        const SceneObject o{rng.pick(config.shapes), rng.pick(config.colors)};
        inst.object_features.push_back(object_feature(o, dims, rng));
        inst.object_tags.push_back(o.color);
        inst.object_tags.push_back(o.shape);
      }

      inst.question_words = {"what", "does", "the", "sign", "say"};
      true_answer.clear();
      for (int i = 0; i < L; ++i) {
        if (i > 0) true_answer.push_back(' ');
        true_answer += answer_words[static_cast<std::size_t>(i)];
      }
      inst.answer_type = AnswerType::kOther;
    }

    // --- simulated annotators ---------------------------------------------
    for (int a = 0; a < 10; ++a) {
      std::string given = true_answer;
      if (rng.bernoulli(config.annotator_noise)) {
        if (!text_question) {
          if (inst.answer_type == AnswerType::kYesNo) {
            given = true_answer == "yes" ? "no" : "yes";
          } else if (inst.answer_type == AnswerType::kNumber) {
            std::string alt = std::to_string(rng.uniform_int(0, config.max_objects));
            while (alt == true_answer) alt = std::to_string(rng.uniform_int(0, config.max_objects));
            given = alt;
          } else if (config.colors.size() >= 2) {
            std::string alt = rng.pick(config.colors);
            while (alt == true_answer) alt = rng.pick(config.colors);
            given = alt;
          }
        } else {
          // misread the sign, staying OCR-composable for this instance
          const int L = static_cast<int>(answer_words.size());
          std::vector<std::string> words = answer_words;
          std::vector<std::string> extra;
          for (std::size_t m = static_cast<std::size_t>(L); m < inst.ocr_tokens.size(); ++m) {
            extra.push_back(inst.ocr_tokens[m].text);
          }
          if (!extra.empty()) {
            words[static_cast<std::size_t>(rng.uniform_int(0, L - 1))] = rng.pick(extra);
          } else if (L >= 2) {
            words.pop_back();
          } else {
            words.push_back(words[0]);
          }
          given.clear();
          for (std::size_t i = 0; i < words.size(); ++i) {
            if (i > 0) given.push_back(' ');
            given += words[i];
          }
        }
      }
      if (!text_question) given = maybe_capitalized(given, rng);
      inst.human_answers[static_cast<std::size_t>(a)] = given;
    }

    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace dualroute
