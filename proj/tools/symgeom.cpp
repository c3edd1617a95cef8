// Command-line front end. Every subcommand is a pipeline stage: its flags are
// the keys of the stage's parameter block, `--config block.json` supplies a
// block to start from, and `--dump-config` prints the merged block instead of
// running. `run --config cfg.json` executes a whole pipeline.

#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "symgeom/pipeline.hpp"

using namespace symgeom;

namespace {

struct StageCommand {
  const StageSchema* schema = nullptr;
  CLI::App* app = nullptr;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> flags;
  std::string config;
  bool dump = false;
};

std::string option_names(const std::string& key) { return key.size() == 1 ? "-" + key + ",--" + key : "--" + key; }

std::string type_hint(ParamType t) {
  switch (t) {
    case ParamType::text: return "TEXT";
    case ParamType::integer: return "INT";
    case ParamType::number: return "NUM";
    case ParamType::flag: return "";
    case ParamType::texts: return "A,B,..";
    case ParamType::numbers: return "X,Y,..";
    case ParamType::integers: return "N,M|A..B";
  }
  return "";
}

void register_stage(CLI::App& root, StageCommand& cmd) {
  cmd.app = root.add_subcommand(cmd.schema->name, cmd.schema->summary);
  cmd.app->add_option("--config", cmd.config, "JSON parameter block to start from");
  cmd.app->add_flag("--dump-config", cmd.dump, "print the merged parameter block and exit");
  for (const auto& p : cmd.schema->params) {
    std::string help = p.help;
    if (!p.def.is_null() && !(p.def.is_string() && p.def.get<std::string>().empty()) && !(p.def.is_array() && p.def.empty()))
      help += " [default: " + (p.def.is_string() ? p.def.get<std::string>() : p.def.dump()) + "]";
    if (p.type == ParamType::flag) {
      cmd.flags[p.key] = false;
      cmd.app->add_flag(p.key.rfind("no-", 0) == 0 ? "--" + p.key : "--" + p.key + ",!--no-" + p.key, cmd.flags[p.key], help);
    } else {
      cmd.values[p.key];
      cmd.app->add_option(option_names(p.key), cmd.values[p.key], help)->type_name(type_hint(p.type));
    }
  }
}

Json stage_block(const StageCommand& cmd) {
  Json block = Json::object();
  if (!cmd.config.empty()) {
    block = read_json(cmd.config);
    if (!block.is_object()) throw UsageError("--config: " + cmd.config + " must hold a JSON object");
  }
  for (const auto& p : cmd.schema->params) {
    const std::string opt = p.type == ParamType::flag ? "--" + p.key : option_names(p.key).substr(0, option_names(p.key).find(','));
    if (cmd.app->count(opt) == 0) continue;
    if (p.type == ParamType::flag) block[p.key] = cmd.flags.at(p.key);
    else block[p.key] = parse_param_text(p, cmd.values.at(p.key));
  }
  return validate_params(*cmd.schema, block);
}

int run_main(int argc, char** argv) {
  CLI::App app{"Co-occurrence statistics to embedding geometry"};
  app.require_subcommand(1);
  std::vector<StageCommand> commands;
  commands.reserve(stage_schemas().size());
  for (const auto& s : stage_schemas()) {
    commands.push_back({&s});
    register_stage(app, commands.back());
  }
  std::string run_config;
  std::vector<std::string> overrides;
  bool plan_only = false;
  auto* run = app.add_subcommand("run", "execute a pipeline described by a JSON run config");
  run->add_option("--config", run_config, "run config (JSON)")->required();
  run->add_option("--set", overrides, "override stage.key=value (repeatable)");
  run->add_flag("--plan", plan_only, "print the resolved plan and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  if (run->parsed()) {
    require_file(run_config);
    Json cfg = read_json(run_config);
    for (const auto& o : overrides) apply_override(cfg, o);
    const auto plan = plan_run(cfg, fs::path(run_config).parent_path().empty() ? fs::path(".") : fs::path(run_config).parent_path());
    if (plan_only) {
      Json j{{"config_hash", plan.hash}, {"output_dir", plan.output_dir.string()}, {"stages", Json::array()}};
      for (const auto& st : plan.stages) j["stages"].push_back({{"stage", st.label}, {"params", st.params}});
      std::cout << j.dump(2) << "\n";
      return 0;
    }
    try {
      const Json manifest = run_pipeline(plan);
      std::cout << manifest.dump(2) << "\n";
    } catch (const RunFailure& f) {
      std::cerr << "manifest: " << (plan.output_dir / "manifest.json").string() << "\n";
      throw;
    }
    return 0;
  }
  for (auto& cmd : commands) {
    if (!cmd.app->parsed()) continue;
    const Json block = stage_block(cmd);
    if (cmd.dump) {
      std::cout << block.dump(2) << "\n";
      return 0;
    }
    StageContext ctx;
    ctx.config_hash = config_hash(block);
    const Json summary = run_stage(cmd.schema->name, block, ctx);
    Json report{{"stage", cmd.schema->name}, {"config_hash", ctx.config_hash}, {"summary", summary}, {"files", Json::array()}};
    for (const auto& f : ctx.files) report["files"].push_back({{"artifact", f.artifact}, {"path", f.path.string()}, {"fnv1a", f.hash}});
    std::cout << report.dump(2) << "\n";
    return 0;
  }
  return static_cast<int>(ErrorKind::usage);
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run_main(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::bad_alloc&) {
    std::cerr << "error: out of memory\n";
    return static_cast<int>(ErrorKind::numerical);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  }
}
