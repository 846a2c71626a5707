#include "dualroute/schema.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dualroute/common.hpp"

namespace dualroute {

using nlohmann::json;

namespace {
constexpr const char* kFileTag = "dualroute-dataset";
constexpr int kFileVersion = 1;
}  // namespace

const char* to_string(AnswerType type) {
  switch (type) {
    case AnswerType::kYesNo: return "yes/no";
    case AnswerType::kNumber: return "number";
    case AnswerType::kOther: return "other";
  }
  return "other";
}

AnswerType answer_type_from_string(const std::string& s) {
  if (s == "yes/no") return AnswerType::kYesNo;
  if (s == "number") return AnswerType::kNumber;
  if (s == "other") return AnswerType::kOther;
  throw SchemaError("unknown answer_type: '" + s + "'");
}

void OCRTokenRecord::validate() const {
  const auto trimmed_empty = [](const std::string& s) {
    return s.find_first_not_of(" \t\r\n") == std::string::npos;
  };
  if (trimmed_empty(text)) throw SchemaError("OCR token text is empty");
  const auto finite = [](const Vec& v) { return v.allFinite(); };
  if (!finite(x_ft) || !finite(x_p) || !finite(x_fr) || !x_spt.allFinite()) {
    throw SchemaError("OCR token '" + text + "' has non-finite features");
  }
  for (int i = 0; i < 4; ++i) {
    if (x_spt[i] < 0.0 || x_spt[i] > 1.0) {
      throw SchemaError("OCR token '" + text + "' has x_spt component outside [0,1]");
    }
  }
  if (x_spt[0] > x_spt[2] || x_spt[1] > x_spt[3]) {
    throw SchemaError("OCR token '" + text + "' has inverted bounding box");
  }
}

void ModelConfig::validate() const {
  if (d < 1) throw ConfigError("d must be >= 1");
  for (const auto [name, v] : {std::pair{"V", V}, {"E", E}, {"M", M},
                               {"T", T}, {"C", C}}) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
  }
  if (num_layers < 0) throw ConfigError("num_layers must be >= 0");
  if (num_heads < 1) throw ConfigError("num_heads must be >= 1");
  if (d % num_heads != 0) throw ConfigError("d must be divisible by num_heads");
  for (const auto [name, v] : {std::pair{"D_ft", D_ft}, {"D_p", D_p},
                               {"D_fr", D_fr}, {"D_obj", D_obj}}) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

ModelConfig ModelConfig::from_kv(const KvFile& kv) {
  ModelConfig c;
  c.d = static_cast<int>(kv.get_int("d", c.d));
  c.V = static_cast<int>(kv.get_int("V", c.V));
  c.E = static_cast<int>(kv.get_int("E", c.E));
  c.M = static_cast<int>(kv.get_int("M", c.M));
  c.T = static_cast<int>(kv.get_int("T", c.T));
  c.C = static_cast<int>(kv.get_int("C", c.C));
  c.num_layers = static_cast<int>(kv.get_int("num_layers", c.num_layers));
  c.num_heads = static_cast<int>(kv.get_int("num_heads", c.num_heads));
  c.D_ft = static_cast<int>(kv.get_int("D_ft", c.D_ft));
  c.D_p = static_cast<int>(kv.get_int("D_p", c.D_p));
  c.D_fr = static_cast<int>(kv.get_int("D_fr", c.D_fr));
  c.D_obj = static_cast<int>(kv.get_int("D_obj", c.D_obj));
  c.dropout = kv.get_double("dropout", c.dropout);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.validate();
  return c;
}

std::string ModelConfig::to_kv_text() const {
  std::ostringstream out;
  out << "d = " << d << "\n"
      << "V = " << V << "\n"
      << "E = " << E << "\n"
      << "M = " << M << "\n"
      << "T = " << T << "\n"
      << "C = " << C << "\n"
      << "num_layers = " << num_layers << "\n"
      << "num_heads = " << num_heads << "\n"
      << "D_ft = " << D_ft << "\n"
      << "D_p = " << D_p << "\n"
      << "D_fr = " << D_fr << "\n"
      << "D_obj = " << D_obj << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", dropout);
  out << "dropout = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", weight_decay);
  out << "weight_decay = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", learning_rate);
  out << "learning_rate = " << buf << "\n";
  out << "batch_size = " << batch_size << "\n"
      << "epochs = " << epochs << "\n"
      << "seed = " << seed << "\n";
  return out.str();
}

namespace {

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec json_to_vec(const json& a) {
  if (!a.is_array()) throw SchemaError("expected a numeric array");
  Vec v(static_cast<int>(a.size()));
  for (int i = 0; i < v.size(); ++i) {
    if (!a[static_cast<std::size_t>(i)].is_number()) {
      throw SchemaError("expected a numeric array element");
    }
    v[i] = a[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

json instance_to_json(const VQAInstance& inst) {
  json j;
  j["instance_id"] = inst.instance_id;
  j["question_words"] = inst.question_words;
  json feats = json::array();
  for (const auto& f : inst.object_features) feats.push_back(vec_to_json(f));
  j["object_features"] = feats;
  j["object_tags"] = inst.object_tags;
  json toks = json::array();
  for (const auto& t : inst.ocr_tokens) {
    json jt;
    jt["text"] = t.text;
    jt["x_ft"] = vec_to_json(t.x_ft);
    jt["x_p"] = vec_to_json(t.x_p);
    jt["x_fr"] = vec_to_json(t.x_fr);
    jt["x_spt"] = {t.x_spt[0], t.x_spt[1], t.x_spt[2], t.x_spt[3]};
    toks.push_back(jt);
  }
  j["ocr_tokens"] = toks;
  j["human_answers"] = inst.human_answers;
  j["answer_type"] = to_string(inst.answer_type);
  return j;
}

const json& require_field(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) throw SchemaError(std::string("missing required field '") + name + "'");
  return *it;
}

VQAInstance instance_from_json(const json& j) {
  VQAInstance inst;
  inst.instance_id = require_field(j, "instance_id").get<std::string>();
  for (const auto& w : require_field(j, "question_words")) {
    inst.question_words.push_back(w.get<std::string>());
  }
  for (const auto& f : require_field(j, "object_features")) {
    inst.object_features.push_back(json_to_vec(f));
  }
  for (const auto& t : require_field(j, "object_tags")) {
    inst.object_tags.push_back(t.get<std::string>());
  }
  for (const auto& t : require_field(j, "ocr_tokens")) {
    OCRTokenRecord rec;
    rec.text = require_field(t, "text").get<std::string>();
    rec.x_ft = json_to_vec(require_field(t, "x_ft"));
    rec.x_p = json_to_vec(require_field(t, "x_p"));
    rec.x_fr = json_to_vec(require_field(t, "x_fr"));
    const Vec spt = json_to_vec(require_field(t, "x_spt"));
    if (spt.size() != 4) throw SchemaError("x_spt must have exactly 4 components");
    rec.x_spt = spt;
    inst.ocr_tokens.push_back(std::move(rec));
  }
  const auto& answers = require_field(j, "human_answers");
  if (!answers.is_array()) throw SchemaError("human_answers must be an array");
  if (answers.size() > 10) throw SchemaError("human_answers has more than 10 entries");
  std::vector<std::string> given;
  for (const auto& a : answers) given.push_back(a.get<std::string>());
  if (given.empty()) throw SchemaError("human_answers is empty");
  if (given.size() < 10) {
    // Pad by repeating the most frequent answer (lexicographic tie-break).
    std::map<std::string, int> counts;
    for (const auto& a : given) ++counts[a];
    std::string best = given[0];
    int best_count = 0;
    for (const auto& [ans, n] : counts) {
      if (n > best_count) {
        best = ans;
        best_count = n;
      }
    }
    warn("instance '" + inst.instance_id + "': " + std::to_string(given.size()) +
         " human answers, padding to 10 with '" + best + "'");
    while (given.size() < 10) given.push_back(best);
  }
  for (std::size_t i = 0; i < 10; ++i) inst.human_answers[i] = given[i];
  inst.answer_type = answer_type_from_string(require_field(j, "answer_type").get<std::string>());
  return inst;
}

void check_dims(const VQAInstance& inst, const ModelConfig& cfg) {
  for (const auto& f : inst.object_features) {
    if (f.size() != cfg.D_obj) {
      throw SchemaError("instance '" + inst.instance_id + "': object feature has dim " +
                        std::to_string(f.size()) + ", expected D_obj=" + std::to_string(cfg.D_obj));
    }
  }
  for (const auto& t : inst.ocr_tokens) {
    if (t.x_ft.size() != cfg.D_ft || t.x_p.size() != cfg.D_p || t.x_fr.size() != cfg.D_fr) {
      throw SchemaError("instance '" + inst.instance_id + "': OCR token '" + t.text +
                        "' feature dims do not match config");
    }
  }
}

template <typename T>
void truncate_list(std::vector<T>& v, int max, const char* what, const std::string& id) {
  if (static_cast<int>(v.size()) > max) {
    warn("instance '" + id + "': truncating " + what + " from " +
         std::to_string(v.size()) + " to " + std::to_string(max));
    v.resize(static_cast<std::size_t>(max));
  }
}

std::vector<VQAInstance> load_dataset_impl(const std::string& path,
                                           const ModelConfig* cfg) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file, header expected");
  ++line_no;
  try {
    const json header = json::parse(line);
    if (header.value("file", "") != kFileTag || header.value("version", 0) != kFileVersion) {
      throw SchemaError("not a " + std::string(kFileTag) + " v" +
                        std::to_string(kFileVersion) + " file");
    }
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": line 1: invalid header: " + e.what());
  }

  std::vector<VQAInstance> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    VQAInstance inst;
    try {
      inst = instance_from_json(j);
      if (cfg != nullptr) {
        truncate_list(inst.question_words, cfg->V, "question_words", inst.instance_id);
        truncate_list(inst.object_features, cfg->E, "object_features", inst.instance_id);
        // tags join the word stream, so they share the word-sequence bound
        truncate_list(inst.object_tags, cfg->V, "object_tags", inst.instance_id);
        truncate_list(inst.ocr_tokens, cfg->M, "ocr_tokens", inst.instance_id);
        check_dims(inst, *cfg);
      }
      for (const auto& t : inst.ocr_tokens) t.validate();
    } catch (const SchemaError& e) {
      throw SchemaError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace

std::vector<VQAInstance> load_dataset(const std::string& path, const ModelConfig& config) {
  config.validate();
  return load_dataset_impl(path, &config);
}

std::vector<VQAInstance> load_dataset_auto(const std::string& path) {
  return load_dataset_impl(path, nullptr);
}

void save_dataset(const std::vector<VQAInstance>& instances, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  json header;
  header["file"] = kFileTag;
  header["version"] = kFileVersion;
  out << header.dump() << "\n";
  for (const auto& inst : instances) {
    out << instance_to_json(inst).dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace dualroute
