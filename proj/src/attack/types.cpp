#include "embattack/attack/types.h"

#include "embattack/numerics/errors.h"

namespace embattack::attack {

InitStrategy InitStrategy::repeat_token(char character, std::size_t count) {
  InitStrategy s;
  s.kind = Kind::kRepeatToken;
  s.character = character;
  s.count = count;
  s.text.clear();
  return s;
}

InitStrategy InitStrategy::string(std::string text) {
  InitStrategy s;
  s.kind = Kind::kString;
  s.text = std::move(text);
  return s;
}

InitStrategy InitStrategy::random(double std_dev, std::size_t count) {
  InitStrategy s;
  s.kind = Kind::kRandom;
  s.std_dev = std_dev;
  s.count = count;
  s.text.clear();
  return s;
}

std::size_t InitStrategy::length() const {
  return kind == Kind::kString ? text.size() : count;
}

void InitStrategy::validate() const {
  switch (kind) {
    case Kind::kRepeatToken:
      if (count < 1) throw ArgumentError("repeat_token init needs count >= 1");
      break;
    case Kind::kString:
      if (text.empty()) throw ArgumentError("string init needs a non-empty string");
      break;
    case Kind::kRandom:
      if (count < 1) throw ArgumentError("random init needs count >= 1");
      if (!(std_dev > 0.0)) throw ArgumentError("random init needs std_dev > 0");
      break;
  }
}

void AttackConfig::validate() const {
  init.validate();
  if (!(optimizer.learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
  if (n_iterations == 0) throw ArgumentError("n_iterations must be positive");
  if (gen_every == 0 || n_generations == 0) {
    throw ArgumentError("gen_every and n_generations must be positive");
  }
  if (gen_every > n_iterations) throw ArgumentError("gen_every must not exceed n_iterations");
  if (gen_max_tokens == 0) throw ArgumentError("gen_max_tokens must be positive");
  if (early_stop.mode == EarlyStopMode::kLossThreshold || early_stop.mode == EarlyStopMode::kBoth) {
    if (!(early_stop.loss_threshold > 0.0)) throw ArgumentError("loss threshold must be positive");
  }
}

void Behavior::validate() const {
  if (id.empty() || prompt.empty() || target.empty() || success_marker.empty()) {
    throw ArgumentError("behavior '" + id + "' has an empty field");
  }
}

std::string_view to_string(InitStrategy::Kind kind) {
  switch (kind) {
    case InitStrategy::Kind::kRepeatToken: return "repeat_token";
    case InitStrategy::Kind::kString: return "string";
    case InitStrategy::Kind::kRandom: return "random";
  }
  return "";
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "sign_gd";
}

std::string_view to_string(EarlyStopMode mode) {
  switch (mode) {
    case EarlyStopMode::kOff: return "off";
    case EarlyStopMode::kTargetPrefix: return "target_prefix";
    case EarlyStopMode::kLossThreshold: return "loss_threshold";
    case EarlyStopMode::kBoth: return "both";
  }
  return "";
}

std::string_view to_string(StopReason reason) {
  switch (reason) {
    case StopReason::kBudgetExhausted: return "budget_exhausted";
    case StopReason::kEarlyStopTarget: return "early_stop_target";
    case StopReason::kEarlyStopLoss: return "early_stop_loss";
  }
  return "";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "sign_gd") return OptimizerKind::kSignGd;
  throw ArgumentError("unknown optimizer '" + std::string(name) + "' (expected sgd or sign_gd)");
}

EarlyStopMode parse_early_stop_mode(std::string_view name) {
  for (EarlyStopMode m : {EarlyStopMode::kOff, EarlyStopMode::kTargetPrefix,
                          EarlyStopMode::kLossThreshold, EarlyStopMode::kBoth}) {
    if (name == to_string(m)) return m;
  }
  throw ArgumentError("unknown early-stop mode '" + std::string(name) + "'");
}

InitStrategy::Kind parse_init_kind(std::string_view name) {
  for (auto k : {InitStrategy::Kind::kRepeatToken, InitStrategy::Kind::kString,
                 InitStrategy::Kind::kRandom}) {
    if (name == to_string(k)) return k;
  }
  throw ArgumentError("unknown init strategy '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const InitStrategy& s) {
  j = {{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case InitStrategy::Kind::kRepeatToken:
      j["character"] = std::string(1, s.character);
      j["count"] = s.count;
      break;
    case InitStrategy::Kind::kString:
      j["text"] = s.text;
      break;
    case InitStrategy::Kind::kRandom:
      j["std_dev"] = s.std_dev;
      j["count"] = s.count;
      break;
  }
}

void from_json(const nlohmann::json& j, InitStrategy& s) {
  const auto kind = parse_init_kind(j.at("kind").get<std::string>());
  switch (kind) {
    case InitStrategy::Kind::kRepeatToken: {
      const auto c = j.value("character", std::string("x"));
      if (c.size() != 1) throw ArgumentError("repeat_token character must be a single byte");
      s = InitStrategy::repeat_token(c[0], j.value("count", std::size_t{20}));
      break;
    }
    case InitStrategy::Kind::kString:
      s = InitStrategy::string(j.value("text", std::string(kInstructionInitString)));
      break;
    case InitStrategy::Kind::kRandom:
      s = InitStrategy::random(j.value("std_dev", 0.02), j.value("count", std::size_t{20}));
      break;
  }
}

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = {{"optimizer", to_string(c.optimizer.kind)},
       {"learning_rate", c.optimizer.learning_rate},
       {"init", c.init},
       {"n_iterations", c.n_iterations},
       {"gen_every", c.gen_every},
       {"n_generations", c.n_generations},
       {"gen_max_tokens", c.gen_max_tokens},
       {"early_stop", to_string(c.early_stop.mode)},
       {"loss_threshold", c.early_stop.loss_threshold},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  AttackConfig d;
  c.optimizer.kind = parse_optimizer_kind(j.value("optimizer", std::string(to_string(d.optimizer.kind))));
  c.optimizer.learning_rate = j.value("learning_rate", d.optimizer.learning_rate);
  c.init = j.contains("init") ? j.at("init").get<InitStrategy>() : d.init;
  c.gen_every = j.value("gen_every", d.gen_every);
  c.n_generations = j.value("n_generations", d.n_generations);
  c.n_iterations = j.value("n_iterations", c.gen_every * c.n_generations);
  c.gen_max_tokens = j.value("gen_max_tokens", d.gen_max_tokens);
  c.early_stop.mode = parse_early_stop_mode(j.value("early_stop", std::string(to_string(d.early_stop.mode))));
  c.early_stop.loss_threshold = j.value("loss_threshold", d.early_stop.loss_threshold);
  c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const Behavior& b) {
  j = {{"id", b.id}, {"prompt", b.prompt}, {"target", b.target}, {"success_marker", b.success_marker}};
}

void from_json(const nlohmann::json& j, Behavior& b) {
  b.id = j.at("id").get<std::string>();
  b.prompt = j.at("prompt").get<std::string>();
  b.target = j.at("target").get<std::string>();
  b.success_marker = j.at("success_marker").get<std::string>();
}

void to_json(nlohmann::json& j, const AttackResult& r) {
  nlohmann::json candidates = nlohmann::json::array();
  for (const Candidate& c : r.candidates) {
    candidates.push_back({{"iteration", c.iteration}, {"text", c.text}});
  }
  j = {{"behavior_id", r.behavior_id},
       {"iterations_run", r.iterations_run},
       {"stop_reason", to_string(r.stop_reason)},
       {"loss_trace", r.loss_trace},
       {"candidates", candidates}};
  if (r.error) j["error"] = *r.error;
}

}  // namespace embattack::attack
