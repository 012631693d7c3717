#include "zhmt/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "zhmt/errors.hpp"
#include "zhmt/utf8.hpp"

namespace zhmt {

std::string_view to_string(Stage s) { return s == Stage::Pretrain ? "pretrain" : "finetune"; }

Stage parse_stage(std::string_view s) {
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "finetune") return Stage::Finetune;
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::RandomInit: return "random_init";
    case Ablation::ReuseInit: return "reuse_init";
    case Ablation::RandomTrain: return "random_train";
    case Ablation::OrderTrain: return "order_train";
  }
  return "?";
}

Ablation parse_ablation(std::string_view s) {
  for (Ablation a : kAllAblations)
    if (to_string(a) == s) return a;
  throw ConfigError("unknown ablation '" + std::string(s) + "'");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected a nonnegative integer, got '" + std::string(v) + "'");
  return out;
}

double to_double(std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double d = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError("expected a number, got '" + s + "'");
  return d;
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected a boolean, got '" + std::string(v) + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

template <class C>
struct Field {
  std::string key;
  std::function<std::string(const C&)> get;
  std::function<void(C&, std::string_view)> set;
};

template <class C, class T>
Field<C> size_field(std::string key, T C::*m) {
  return {std::move(key), [m](const C& c) { return std::to_string(c.*m); },
          [m](C& c, std::string_view v) { c.*m = static_cast<T>(to_size(v)); }};
}

template <class C>
Field<C> double_field(std::string key, double C::*m) {
  return {std::move(key), [m](const C& c) { return format_double(c.*m); },
          [m](C& c, std::string_view v) { c.*m = to_double(v); }};
}

template <class C>
Field<C> bool_field(std::string key, bool C::*m) {
  return {std::move(key), [m](const C& c) { return from_bool(c.*m); },
          [m](C& c, std::string_view v) { c.*m = to_bool(v); }};
}

template <class C>
Field<C> string_field(std::string key, std::string C::*m) {
  return {std::move(key), [m](const C& c) { return c.*m; }, [m](C& c, std::string_view v) { c.*m = std::string(v); }};
}

std::vector<Field<ModelConfig>> model_fields(bool with_seed) {
  using M = ModelConfig;
  std::vector<Field<M>> f = {
      size_field("vocab_size", &M::vocab_size),
      size_field("hidden", &M::hidden),
      size_field("ffn_inner", &M::ffn_inner),
      size_field("heads", &M::heads),
      size_field("layers", &M::layers),
      size_field("context", &M::context),
      size_field("sparse_step", &M::sparse_step),
      size_field("moe_expert_count", &M::moe_expert_count),
      size_field("top_k", &M::top_k),
      {"moe_placement", [](const M& c) { return std::string(to_string(c.moe_placement)); },
       [](M& c, std::string_view v) { c.moe_placement = parse_moe_placement(v); }},
      {"init_mode", [](const M& c) { return std::string(to_string(c.init_mode)); },
       [](M& c, std::string_view v) { c.init_mode = parse_init_mode(v); }},
      size_field("reuse_count", &M::reuse_count),
      double_field("init_std", &M::init_std),
      double_field("head_init_std", &M::head_init_std),
      double_field("layer_norm_eps", &M::layer_norm_eps),
      bool_field("train_backbone", &M::train_backbone),
      double_field("load_balance_coef", &M::load_balance_coef),
  };
  if (with_seed) f.push_back(size_field("seed", &M::seed));
  return f;
}

std::vector<Field<OptimizerConfig>> optimizer_fields() {
  using O = OptimizerConfig;
  return {
      double_field("beta1", &O::beta1),
      double_field("beta2", &O::beta2),
      double_field("epsilon", &O::epsilon),
      double_field("weight_decay", &O::weight_decay),
      double_field("peak_lr", &O::peak_lr),
      size_field("warmup_steps", &O::warmup_steps),
      size_field("total_steps", &O::total_steps),
      size_field("batch_size", &O::batch_size),
      double_field("grad_clip_norm", &O::grad_clip_norm),
      bool_field("clip_gradients", &O::clip_gradients),
  };
}

std::vector<Field<CurriculumSchedule>> curriculum_fields() {
  using S = CurriculumSchedule;
  std::vector<Field<S>> f;
  for (ResourceTier t : kAllTiers) {
    const auto i = static_cast<std::size_t>(t);
    f.push_back({"phase_start." + std::string(to_string(t)), [i](const S& s) { return format_double(s.phase_starts[i]); },
                 [i](S& s, std::string_view v) { s.phase_starts[i] = to_double(v); }});
  }
  for (ResourceTier t : kAllTiers) {
    const auto i = static_cast<std::size_t>(t);
    f.push_back({"final_weight." + std::string(to_string(t)),
                 [i](const S& s) { return format_double(s.final_weights[i]); },
                 [i](S& s, std::string_view v) { s.final_weights[i] = to_double(v); }});
  }
  f.push_back(double_field("ramp_fraction", &S::ramp_fraction));
  f.push_back(double_field("zh_target_min_fraction", &S::zh_target_min_fraction));
  f.push_back(bool_field("normalize_loss", &S::normalize_loss));
  return f;
}

std::vector<Field<RunConfig>> run_fields() {
  using R = RunConfig;
  return {
      {"stage", [](const R& r) { return std::string(to_string(r.stage)); },
       [](R& r, std::string_view v) { r.stage = parse_stage(v); }},
      {"ablation", [](const R& r) { return std::string(to_string(r.ablation)); },
       [](R& r, std::string_view v) { r.ablation = parse_ablation(v); }},
      size_field("seed", &R::seed),
      size_field("workers", &R::workers),
      size_field("checkpoint_every", &R::checkpoint_every),
      bool_field("include_prompt_loss", &R::include_prompt_loss),
      size_field("eval_template", &R::eval_template),
      size_field("eval_max_new", &R::eval_max_new),
  };
}

std::vector<Field<DataConfig>> data_fields() {
  using D = DataConfig;
  return {string_field("mono", &D::mono),
          string_field("para", &D::para),
          string_field("templates", &D::templates),
          string_field("init_checkpoint", &D::init_checkpoint),
          string_field("sensitive_words", &D::sensitive_words),
          string_field("tokenizer", &D::tokenizer)};
}

template <class C>
Field<C> u32_field(std::string key, std::u32string C::*m) {
  return {std::move(key), [m](const C& c) { return utf8::encode(std::vector<char32_t>((c.*m).begin(), (c.*m).end())); },
          [m](C& c, std::string_view v) {
            if (!utf8::valid(v)) throw ConfigError("invalid UTF-8 in value");
            const auto cps = utf8::decode(v);
            c.*m = std::u32string(cps.begin(), cps.end());
          }};
}

std::vector<Field<MonoPipelineConfig>> mono_fields() {
  using M = MonoPipelineConfig;
  return {size_field("min_chars", &M::min_chars), size_field("max_chars", &M::max_chars),
          u32_field("allowed_punctuation", &M::allowed_punctuation),
          u32_field("sentence_terminators", &M::sentence_terminators),
          u32_field("closing_quotes", &M::closing_quotes)};
}

std::vector<Field<ParaPipelineConfig>> para_fields() {
  using P = ParaPipelineConfig;
  return {double_field("punct_ratio_max", &P::punct_ratio_max),
          double_field("nonprintable_ratio_max", &P::nonprintable_ratio_max),
          size_field("max_token_chars", &P::max_token_chars),
          double_field("script_ratio_min", &P::script_ratio_min),
          double_field("length_ratio_max", &P::length_ratio_max),
          size_field("min_avg_tokens", &P::min_avg_tokens),
          size_field("max_chars", &P::max_chars),
          double_field("sensitive_freq_max", &P::sensitive_freq_max)};
}

std::vector<Field<AugmentConfig>> augment_fields() {
  using A = AugmentConfig;
  return {
      string_field("translator", &A::translator),
      {"tiers",
       [](const A& a) {
         std::string s;
         for (std::size_t i = 0; i < a.tiers.size(); ++i) s += (i ? "," : "") + std::string(to_string(a.tiers[i]));
         return s;
       },
       [](A& a, std::string_view v) {
         a.tiers.clear();
         std::size_t start = 0;
         while (start <= v.size()) {
           const auto comma = std::min(v.find(',', start), v.size());
           const std::string item = trim(v.substr(start, comma - start));
           if (!item.empty()) a.tiers.push_back(parse_tier(item));
           start = comma + 1;
         }
       }},
      double_field("synthetic_weight", &A::synthetic_weight),
  };
}

template <class C>
void emit(std::string& out, const std::string& section, const std::vector<Field<C>>& fields, const C& c) {
  out += "[" + section + "]\n";
  for (const auto& f : fields) out += f.key + " = " + f.get(c) + "\n";
}

template <class C>
bool assign(const std::vector<Field<C>>& fields, C& c, const std::string& key, std::string_view value) {
  for (const auto& f : fields)
    if (f.key == key) {
      f.set(c, value);
      return true;
    }
  return false;
}

struct Line {
  std::size_t number;
  std::string section, key, value;
};

std::vector<Line> parse_lines(std::string_view text) {
  std::vector<Line> out;
  std::istringstream in{std::string(text)};
  std::string raw, section;
  std::size_t n = 0;
  while (std::getline(in, raw)) {
    ++n;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(n) + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    if (section.empty()) throw ConfigError("config line " + std::to_string(n) + ": key outside any section");
    out.push_back({n, section, trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1))});
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  mono.validate();
  para.validate();
  model.validate();
  optimizer.validate();
  CurriculumSchedule s = schedule;
  s.total_steps = optimizer.total_steps;
  s.validate();
  if (workers == 0) throw ConfigError("workers must be positive");
  if (augment.translator != "none" && augment.translator != "identity" && augment.translator != "word-reverse" &&
      augment.translator != "dictionary")
    throw ConfigError("unknown translator '" + augment.translator + "'");
  if (!(augment.synthetic_weight > 0.0)) throw ConfigError("synthetic_weight must be positive");
}

RunConfig RunConfig::effective() const {
  RunConfig r = *this;
  r.model.seed = seed;
  r.schedule.total_steps = optimizer.total_steps;
  switch (ablation) {
    case Ablation::Full: break;
    case Ablation::RandomInit: r.model.init_mode = InitMode::Random; break;
    case Ablation::ReuseInit: r.model.init_mode = InitMode::Reuse; break;
    case Ablation::RandomTrain: r.schedule.mode = CurriculumMode::Uniform; break;
    case Ablation::OrderTrain: r.schedule.mode = CurriculumMode::Ordered; break;
  }
  return r;
}

std::string RunConfig::serialize() const {
  std::string out;
  emit(out, "run", run_fields(), *this);
  out += "\n";
  emit(out, "mono", mono_fields(), mono);
  out += "\n";
  emit(out, "para", para_fields(), para);
  out += "\n";
  emit(out, "model", model_fields(false), model);
  out += "\n";
  emit(out, "optimizer", optimizer_fields(), optimizer);
  out += "\n";
  emit(out, "curriculum", curriculum_fields(), schedule);
  out += "\n";
  emit(out, "data", data_fields(), data);
  out += "\n";
  emit(out, "augment", augment_fields(), augment);
  for (const auto& [dir, path] : augment.dictionaries) out += "dict." + dir.first + "." + dir.second + " = " + path + "\n";
  return out;
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig r;
  const auto rf = run_fields();
  const auto mf = model_fields(false);
  const auto of = optimizer_fields();
  const auto cf = curriculum_fields();
  const auto df = data_fields();
  const auto af = augment_fields();
  const auto monof = mono_fields();
  const auto paraf = para_fields();
  for (const Line& l : parse_lines(text)) {
    const std::string where = "config line " + std::to_string(l.number) + ": ";
    bool known = false;
    try {
      if (l.section == "run") known = assign(rf, r, l.key, l.value);
      else if (l.section == "mono") known = assign(monof, r.mono, l.key, l.value);
      else if (l.section == "para") known = assign(paraf, r.para, l.key, l.value);
      else if (l.section == "model") known = assign(mf, r.model, l.key, l.value);
      else if (l.section == "optimizer") known = assign(of, r.optimizer, l.key, l.value);
      else if (l.section == "curriculum") known = assign(cf, r.schedule, l.key, l.value);
      else if (l.section == "data") known = assign(df, r.data, l.key, l.value);
      else if (l.section == "augment") {
        known = assign(af, r.augment, l.key, l.value);
        if (!known && l.key.rfind("dict.", 0) == 0) {
          const std::string dir = l.key.substr(5);
          const auto dot = dir.find('.');
          if (dot == std::string::npos || !is_language_code(dir.substr(0, dot)) || !is_language_code(dir.substr(dot + 1)))
            throw ConfigError("dictionary keys look like dict.<from>.<to>");
          r.augment.dictionaries[{dir.substr(0, dot), dir.substr(dot + 1)}] = l.value;
          known = true;
        }
      } else {
        throw ConfigError("unknown section [" + l.section + "]");
      }
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    } catch (const Error& e) {
      throw ConfigError(where + e.what());
    }
    if (!known) throw ConfigError(where + "unknown key '" + l.key + "' in [" + l.section + "]");
  }
  return r;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write config file " + path.string());
  out << serialize();
  if (!out) throw IoError("write failed for " + path.string());
}

std::string serialize_model_config(const ModelConfig& cfg) {
  std::string out;
  emit(out, "model", model_fields(true), cfg);
  return out;
}

ModelConfig parse_model_config(std::string_view text) {
  ModelConfig m;
  const auto mf = model_fields(true);
  for (const Line& l : parse_lines(text)) {
    if (l.section != "model" || !assign(mf, m, l.key, l.value))
      throw ConfigError("model config line " + std::to_string(l.number) + ": unknown key '" + l.key + "'");
  }
  return m;
}

}  // namespace zhmt
