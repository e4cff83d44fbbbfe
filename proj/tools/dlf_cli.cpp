#include <CLI11.hpp>

#include "dlf/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dlf: learn loss-function coefficients for a student network"};
  app.require_subcommand(1);

  std::string config, teacher, checkpoint, states, out;

  auto* tt = app.add_subcommand("train-teacher", "optimize the teacher by reverse-mode hypergradients");
  tt->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);

  auto* ts = app.add_subcommand("train-student", "train one student and report its test error");
  ts->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  ts->add_option("--teacher", teacher, "teacher checkpoint (overrides teacher.checkpoint)");

  auto* gc = app.add_subcommand("gradcheck", "compare the hypergradient against finite differences");
  gc->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);

  auto* dc = app.add_subcommand("dump-coefficients", "evaluate a teacher on student states and write the coefficients");
  dc->add_option("--checkpoint", checkpoint, "teacher checkpoint")->required();
  dc->add_option("--states", states, "state file, one state per line")->required();
  dc->add_option("--out", out, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : dlf::exit_code::invalid;
  }

  if (*tt) return dlf::cmd_train_teacher(config);
  if (*ts) return dlf::cmd_train_student(config, teacher);
  if (*gc) return dlf::cmd_gradcheck(config);
  return dlf::cmd_dump_coefficients(checkpoint, states, out);
}
