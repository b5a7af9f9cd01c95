#include "sfl/runspec.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace sfl {

namespace {

using json = ordered_json;

[[noreturn]] void bad(const std::string& msg) {
  throw std::invalid_argument(msg);
}

void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      bad("unknown key '" + (where.empty() ? it.key() : where + "." + it.key()) +
          "'");
}

double get_number(const json& obj, const std::string& where,
                  const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) bad(where + "." + key + " must be a number");
  return v.get<double>();
}

int get_int(const json& obj, const std::string& where, const std::string& key,
            int fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) bad(where + "." + key + " must be an integer");
  return v.get<int>();
}

Interval get_interval(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    bad(where + " must be [lo, hi]");
  return Interval{v[0].get<double>(), v[1].get<double>()};
}

Op unary_op_from_name(const std::string& s) {
  if (s == "id" || s == "identity") return Op::Identity;
  if (s == "sin") return Op::Sin;
  if (s == "cos") return Op::Cos;
  if (s == "sqrt") return Op::SqrtAbs;
  if (s == "exp") return Op::Exp;
  if (s == "log") return Op::LogAbs;
  if (s == "abs") return Op::Abs;
  if (s == "neg") return Op::Neg;
  bad("unknown unary operator '" + s + "'");
}

Op binary_op_from_name(const std::string& s) {
  if (s == "mul" || s == "*") return Op::Mul;
  if (s == "div" || s == "/") return Op::Div;
  if (s == "add" || s == "+") return Op::Add;
  if (s == "sub" || s == "-") return Op::Sub;
  bad("unknown binary operator '" + s + "'");
}

}  // namespace

RunSpec parse_runspec(const json& doc) {
  if (!doc.is_object()) bad("run spec must be a JSON object");
  check_keys(doc, "", {"task", "model", "train", "metrics"});
  if (!doc.contains("task")) bad("missing required section 'task'");

  RunSpec out;

  // --- task ---------------------------------------------------------------
  const json& jt = doc.at("task");
  if (!jt.is_object()) bad("'task' must be an object");
  if (!jt.contains("kind") || !jt.at("kind").is_string())
    bad("task.kind must be a string");
  TaskKind kind = task_kind_from_name(jt.at("kind").get<std::string>());

  const bool wants_g = kind == TaskKind::Ode || kind == TaskKind::Functional;
  const bool wants_p = kind == TaskKind::Integrate ||
                       kind == TaskKind::Inverse || kind == TaskKind::Root;
  std::set<std::string> task_keys = {"kind", "domain", "exclusions",
                                     "constraints", "lambda"};
  if (wants_g) task_keys.insert("g");
  if (wants_p) task_keys.insert("p");
  for (auto it = jt.begin(); it != jt.end(); ++it) {
    if (task_keys.count(it.key())) continue;
    if (it.key() == "g" || it.key() == "p")
      bad("task." + it.key() + " is not valid for kind '" +
          task_kind_name(kind) + "'");
    bad("unknown key 'task." + it.key() + "'");
  }

  std::string text;
  if (wants_g) {
    if (!jt.contains("g") || !jt.at("g").is_string())
      bad("task.g must be an expression string for kind '" +
          task_kind_name(kind) + "'");
    text = jt.at("g").get<std::string>();
  } else if (wants_p) {
    if (!jt.contains("p") || !jt.at("p").is_string())
      bad("task.p must be an expression string for kind '" +
          task_kind_name(kind) + "'");
    text = jt.at("p").get<std::string>();
  }

  Interval domain{-1.0, 1.0};
  if (jt.contains("domain"))
    domain = get_interval(jt.at("domain"), "task.domain");
  else if (kind != TaskKind::Regression)
    bad("task.domain is required for kind '" + task_kind_name(kind) + "'");

  std::vector<Interval> exclusions;
  if (jt.contains("exclusions")) {
    const json& je = jt.at("exclusions");
    if (!je.is_array()) bad("task.exclusions must be an array of [lo, hi]");
    for (const json& e : je)
      exclusions.push_back(get_interval(e, "task.exclusions entry"));
  }

  std::vector<Constraint> constraints;
  if (jt.contains("constraints")) {
    const json& jc = jt.at("constraints");
    if (!jc.is_array()) bad("task.constraints must be an array");
    for (const json& c : jc) {
      if (!c.is_object()) bad("task.constraints entries must be objects");
      check_keys(c, "task.constraints entry", {"x", "order", "value"});
      if (!c.contains("x") || !c.contains("value"))
        bad("task.constraints entries need x and value");
      Constraint cc;
      cc.x = get_number(c, "task.constraints entry", "x", 0.0);
      cc.y = get_number(c, "task.constraints entry", "value", 0.0);
      cc.order = get_int(c, "task.constraints entry", "order", 0);
      constraints.push_back(cc);
    }
  }

  double lambda = get_number(jt, "task", "lambda", 1.0);
  out.task = make_task(kind, text, domain, std::move(exclusions),
                       std::move(constraints), lambda);

  // --- model --------------------------------------------------------------
  SflConfig model;
  if (doc.contains("model")) {
    const json& jm = doc.at("model");
    if (!jm.is_object()) bad("'model' must be an object");
    check_keys(jm, "model",
               {"depth", "unary_ops", "binary_ops", "delta", "sigma"});
    model.depth = get_int(jm, "model", "depth", 2);
    model = SflConfig::for_depth(model.depth);
    if (jm.contains("unary_ops")) {
      const json& ju = jm.at("unary_ops");
      if (!ju.is_array()) bad("model.unary_ops must be an array of names");
      model.unary.clear();
      for (const json& o : ju) {
        if (!o.is_string()) bad("model.unary_ops must be an array of names");
        model.unary.push_back(unary_op_from_name(o.get<std::string>()));
      }
    }
    if (jm.contains("binary_ops")) {
      const json& jb = jm.at("binary_ops");
      if (!jb.is_array()) bad("model.binary_ops must be an array of names");
      model.binary.clear();
      for (const json& o : jb) {
        if (!o.is_string()) bad("model.binary_ops must be an array of names");
        model.binary.push_back(binary_op_from_name(o.get<std::string>()));
      }
    }
    model.delta = get_int(jm, "model", "delta", model.delta);
    model.sigma = get_number(jm, "model", "sigma", model.sigma);
  }
  model.validate();
  out.model = model;

  // --- train --------------------------------------------------------------
  TrainConfig train;
  if (doc.contains("train")) {
    const json& jr = doc.at("train");
    if (!jr.is_object()) bad("'train' must be an object");
    check_keys(jr, "train",
               {"restarts", "iterations", "soft_fraction", "pool_size",
                "batch_size", "validation_size", "step_size", "base_seed",
                "early_stop"});
    train.restarts = get_int(jr, "train", "restarts", train.restarts);
    train.iterations = get_int(jr, "train", "iterations", train.iterations);
    train.soft_fraction =
        get_number(jr, "train", "soft_fraction", train.soft_fraction);
    train.pool_size = get_int(jr, "train", "pool_size", train.pool_size);
    train.batch_size = get_int(jr, "train", "batch_size", train.batch_size);
    train.validation_size =
        get_int(jr, "train", "validation_size", train.validation_size);
    train.step_size = get_number(jr, "train", "step_size", train.step_size);
    if (jr.contains("base_seed")) {
      const json& v = jr.at("base_seed");
      if (!v.is_number_integer() || v.get<int64_t>() < 0)
        bad("train.base_seed must be a nonnegative integer");
      train.base_seed = v.get<uint64_t>();
    }
    if (jr.contains("early_stop"))
      train.early_stop = get_number(jr, "train", "early_stop", 0.0);
  }
  out.train = train;

  // --- metrics ------------------------------------------------------------
  if (doc.contains("metrics")) {
    const json& jq = doc.at("metrics");
    if (!jq.is_object()) bad("'metrics' must be an object");
    check_keys(jq, "metrics", {"residual_intervals"});
    if (jq.contains("residual_intervals")) {
      const json& ji = jq.at("residual_intervals");
      if (!ji.is_array())
        bad("metrics.residual_intervals must be an array of [lo, hi]");
      for (const json& e : ji)
        out.residual_intervals.push_back(
            get_interval(e, "metrics.residual_intervals entry"));
    }
  }

  return out;
}

RunSpec load_runspec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad("cannot open spec file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    bad("spec file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_runspec(doc);
}

ordered_json expr_to_json(const Expr& e) {
  json out;
  switch (e.kind()) {
    case Expr::Kind::Constant:
      out["kind"] = "constant";
      out["value"] = e.value();
      return out;
    case Expr::Kind::Variable:
      out["kind"] = "variable";
      switch (e.var()) {
        case Var::X: out["name"] = "x"; break;
        case Var::Y: out["name"] = "y"; break;
        case Var::DY: out["name"] = "y1"; break;
        case Var::D2Y: out["name"] = "y2"; break;
      }
      return out;
    case Expr::Kind::Apply:
      break;
  }
  out["kind"] = "apply";
  out["op"] = std::string(op_name(e.op()));
  if (e.op() == Op::PowInt) out["k"] = e.pow_exponent();
  json kids = json::array();
  for (int i = 0; i < e.child_count(); ++i)
    kids.push_back(expr_to_json(e.child(i)));
  out["children"] = kids;
  return out;
}

Expr expr_from_json(const ordered_json& doc) {
  if (!doc.is_object() || !doc.contains("kind"))
    bad("expression node must be an object with 'kind'");
  std::string kind = doc.at("kind").get<std::string>();
  if (kind == "constant") return Expr::constant(doc.at("value").get<double>());
  if (kind == "variable") {
    std::string name = doc.at("name").get<std::string>();
    if (name == "x") return Expr::variable(Var::X);
    if (name == "y") return Expr::variable(Var::Y);
    if (name == "y1") return Expr::variable(Var::DY);
    if (name == "y2") return Expr::variable(Var::D2Y);
    bad("unknown variable '" + name + "'");
  }
  if (kind != "apply") bad("unknown expression node kind '" + kind + "'");

  std::string opn = doc.at("op").get<std::string>();
  static const std::pair<const char*, Op> ops[] = {
      {"add", Op::Add},   {"sub", Op::Sub},   {"mul", Op::Mul},
      {"div", Op::Div},   {"neg", Op::Neg},   {"pow", Op::PowInt},
      {"sin", Op::Sin},   {"cos", Op::Cos},   {"sqrt", Op::SqrtAbs},
      {"exp", Op::Exp},   {"log", Op::LogAbs}, {"abs", Op::Abs},
      {"id", Op::Identity}};
  const Op* op = nullptr;
  for (const auto& [name, o] : ops)
    if (opn == name) op = &o;
  if (!op) bad("unknown operator '" + opn + "'");

  std::vector<Expr> kids;
  for (const json& c : doc.at("children")) kids.push_back(expr_from_json(c));
  int k = doc.contains("k") ? doc.at("k").get<int>() : 0;
  return Expr::apply(*op, std::move(kids), k);
}

namespace {

std::string unary_op_name(Op op) { return std::string(op_name(op)); }

json spec_echo(const RunSpec& spec) {
  json jt;
  jt["kind"] = task_kind_name(spec.task.kind);
  switch (spec.task.kind) {
    case TaskKind::Ode:
    case TaskKind::Functional:
      jt["g"] = to_string(spec.task.residual, 12);
      break;
    case TaskKind::Integrate:
    case TaskKind::Inverse:
    case TaskKind::Root:
      jt["p"] = to_string(*spec.task.source, 12);
      break;
    case TaskKind::Regression:
      break;
  }
  jt["domain"] = {spec.task.domain.lo, spec.task.domain.hi};
  if (!spec.task.exclusions.empty()) {
    json je = json::array();
    for (const Interval& e : spec.task.exclusions) je.push_back({e.lo, e.hi});
    jt["exclusions"] = je;
  }
  if (!spec.task.constraints.empty()) {
    json jc = json::array();
    for (const Constraint& c : spec.task.constraints)
      jc.push_back({{"x", c.x}, {"order", c.order}, {"value", c.y}});
    jt["constraints"] = jc;
  }
  jt["lambda"] = spec.task.lambda;

  json jm;
  jm["depth"] = spec.model.depth;
  json ju = json::array();
  for (Op op : spec.model.unary) ju.push_back(unary_op_name(op));
  jm["unary_ops"] = ju;
  json jb = json::array();
  for (Op op : spec.model.binary) jb.push_back(unary_op_name(op));
  jm["binary_ops"] = jb;
  jm["delta"] = spec.model.delta;
  jm["sigma"] = spec.model.sigma;

  json jr;
  jr["restarts"] = spec.train.restarts;
  jr["iterations"] = spec.train.iterations;
  jr["soft_fraction"] = spec.train.soft_fraction;
  jr["pool_size"] = spec.train.pool_size;
  jr["batch_size"] = spec.train.batch_size;
  jr["validation_size"] = spec.train.validation_size;
  jr["step_size"] = spec.train.step_size;
  jr["base_seed"] = spec.train.base_seed;
  if (spec.train.early_stop) jr["early_stop"] = *spec.train.early_stop;

  json out;
  out["task"] = jt;
  out["model"] = jm;
  out["train"] = jr;
  if (!spec.residual_intervals.empty()) {
    json ji = json::array();
    for (const Interval& e : spec.residual_intervals)
      ji.push_back({e.lo, e.hi});
    out["metrics"] = {{"residual_intervals", ji}};
  }
  return out;
}

json params_to_json(const SflParams& p, const SflConfig& cfg) {
  ParamLayout layout(cfg);
  json out = json::array();
  for (int i = 0; i < cfg.leaf_count(); ++i) {
    out.push_back({{"layer", 0},
                   {"node", i},
                   {"w", p.theta[layout.leaf_w(i)]},
                   {"b", p.theta[layout.leaf_b(i)]}});
  }
  for (int n = 1; n <= cfg.depth; ++n) {
    int nodes = cfg.leaf_count() >> n;
    for (int i = 0; i < nodes; ++i) {
      json omega = json::array();
      for (int j = 0; j < cfg.op_count(); ++j)
        omega.push_back(p.theta[layout.omega(n, i) + j]);
      out.push_back({{"layer", n},
                     {"node", i},
                     {"omega", omega},
                     {"w", p.theta[layout.node_w(n, i)]},
                     {"b", p.theta[layout.node_b(n, i)]}});
    }
  }
  return out;
}

}  // namespace

ordered_json result_to_json(const RunSpec& spec, const RunResult& result,
                            std::optional<double> wall_seconds) {
  json out;
  out["version"] = kVersion;
  out["spec"] = spec_echo(spec);

  json jr = json::array();
  for (const RestartRecord& r : result.restarts) {
    json rec;
    rec["seed"] = r.seed;
    rec["diverged"] = r.diverged;
    if (!r.diverged) {
      rec["expression"] = to_string(r.expression, 6);
      rec["validation_err"] = r.validation_err;
    }
    json curve = json::array();
    for (const CurvePoint& c : r.curve)
      curve.push_back({{"iteration", c.iteration},
                       {"mode", c.mode == GateMode::Soft ? "soft" : "discrete"},
                       {"err", c.err}});
    rec["curve"] = curve;
    jr.push_back(rec);
  }
  out["restarts"] = jr;

  if (result.all_diverged()) {
    out["best"] = nullptr;
  } else {
    const RestartRecord& b = result.best();
    json jb;
    jb["restart"] = result.best_index;
    jb["seed"] = b.seed;
    jb["expression"] = to_string(b.expression, 6);
    jb["expression_tree"] = expr_to_json(b.expression);
    jb["validation_err"] = b.validation_err;
    jb["params"] = params_to_json(b.params, spec.model);
    out["best"] = jb;
  }

  if (!spec.residual_intervals.empty() && !result.all_diverged()) {
    json ji = json::array();
    for (const Interval& iv : spec.residual_intervals) {
      double v = residual_error(result.best().expression, spec.task, iv.lo,
                                iv.hi);
      ji.push_back({{"interval", {iv.lo, iv.hi}}, {"value", v}});
    }
    out["metrics"] = {{"residual_error", ji}};
  }

  if (wall_seconds) out["wall_seconds"] = *wall_seconds;
  return out;
}

}  // namespace sfl
