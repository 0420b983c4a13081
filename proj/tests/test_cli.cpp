#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("pfb_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const char* name) const { return (path / name).string(); }
};

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const TempDir& dir, const std::string& args) {
  const std::string capture = dir.file("cli_output.txt");
  const std::string cmd = std::string("\"") + PFB_CLI_PATH + "\" " + args + " > " + capture +
                          " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(capture);
  std::ostringstream buf;
  buf << f.rdbuf();
  r.output = buf.str();
  return r;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

const char* kSynthIni =
    "[synth]\n"
    "n_x = 3\n"
    "n_y = 2\n"
    "length = 400\n"
    "driver1_setpoints = 0.0208,0.0278,0.0347,0.0417\n"
    "driver2_setpoints = 1,2\n"
    "dwell_min = 40\n"
    "dwell_max = 80\n"
    "process_noise = 0.02\n"
    "observation_noise = 0.02\n"
    "label_noise = 0.005\n"
    "source_low = 0.0278\n"
    "source_high = 0.0347\n"
    "source_fraction = 0.45\n"
    "rule_column = 0\n";

std::string run_ini(double lr, int epochs, int batch_size) {
  std::ostringstream out;
  out << "[model]\n"
         "n_x = 3\nn_y = 2\nn_z = 2\nn_h = 8\nlatent_embed = 4\n"
         "encoder_hidden = 4\nprior_hidden = 8\ndecoder_hidden = 8\n"
         "[potential]\n"
         "measurement_embed = 4\nencoder_hidden = 4\npotential_hidden = 8\n"
         "[flow]\n"
         "num_steps = 1\nstep_size = 1\n"
         "[train]\n"
         "window_length = 40\nparticles = 4\nbatch_size = "
      << batch_size
      << "\ninitial_lr = " << lr << "\nepochs = " << epochs
      << "\nl2 = 0.01\nlr_decay = 0.99\nseed = 3\ncheckpoint_every = 10\n"
         "[data]\n"
         "rule_column = y1\nsource_low = 0.0278\nsource_high = 0.0347\n";
  return out.str();
}

}  // namespace

TEST_CASE("a missing subcommand or unknown flag is a usage error") {
  TempDir dir;
  CHECK(run_cli(dir, "").exit_code == 1);
  CHECK(run_cli(dir, "gradcheck --bogus-flag 1").exit_code == 1);
  CHECK(run_cli(dir, "launder").exit_code == 1);
}

TEST_CASE("the gradient suite passes end to end") {
  TempDir dir;
  const RunResult r = run_cli(dir, "gradcheck --seed 1");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("gradient checks passed") != std::string::npos);
}

TEST_CASE("an unknown demo case is a validation error") {
  TempDir dir;
  const RunResult r = run_cli(dir, "flow-demo --case bogus");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("bogus") != std::string::npos);
}

TEST_CASE("missing input files are validation errors") {
  TempDir dir;
  CHECK(run_cli(dir, "synth --config " + dir.file("nope.ini") + " --out " + dir.file("d.csv") +
                         " --seed 1")
            .exit_code == 1);
  CHECK(run_cli(dir, "eval --ckpt " + dir.file("nope.ckpt") + " --data " + dir.file("nope.csv") +
                         " --schema " + dir.file("nope.schema") + " --report " +
                         dir.file("r.csv"))
            .exit_code == 1);
}

TEST_CASE("synth, train, and eval chain together") {
  TempDir dir;
  write_text(dir.file("synth.ini"), kSynthIni);
  write_text(dir.file("run.ini"), run_ini(1e-3, 2, 4));

  const RunResult synth = run_cli(dir, "synth --config " + dir.file("synth.ini") + " --out " +
                                           dir.file("data.csv") + " --seed 5");
  CHECK(synth.exit_code == 0);
  CHECK(synth.output.find("source fraction") != std::string::npos);
  REQUIRE(fs::exists(dir.file("data.csv")));
  REQUIRE(fs::exists(dir.file("data.csv.schema")));

  const RunResult train = run_cli(
      dir, "train --data " + dir.file("data.csv") + " --schema " + dir.file("data.csv.schema") +
               " --config " + dir.file("run.ini") + " --out " + dir.file("model.ckpt") +
               " --log " + dir.file("loss.csv"));
  CHECK(train.exit_code == 0);
  REQUIRE(fs::exists(dir.file("model.ckpt")));
  REQUIRE(fs::exists(dir.file("loss.csv")));
  {
    std::ifstream log(dir.file("loss.csv"));
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) ++lines;
    CHECK(lines == 3);  // header + one row per epoch
  }

  const RunResult eval = run_cli(
      dir, "eval --ckpt " + dir.file("model.ckpt") + " --data " + dir.file("data.csv") +
               " --schema " + dir.file("data.csv.schema") + " --report " + dir.file("report.csv") +
               " --predictions " + dir.file("pred.csv") + " --trajectories " +
               dir.file("traj.csv"));
  CHECK(eval.exit_code == 0);
  REQUIRE(fs::exists(dir.file("report.csv")));
  REQUIRE(fs::exists(dir.file("pred.csv")));
  REQUIRE(fs::exists(dir.file("traj.csv")));
  {
    std::ifstream rep(dir.file("report.csv"));
    std::string first;
    std::getline(rep, first);
    CHECK(first.rfind("# seed=", 0) == 0);
  }
}

TEST_CASE("a diverging run exits with the numerical failure code") {
  TempDir dir;
  write_text(dir.file("synth.ini"), kSynthIni);
  write_text(dir.file("run.ini"), run_ini(1e150, 3, 1));
  REQUIRE(run_cli(dir, "synth --config " + dir.file("synth.ini") + " --out " +
                           dir.file("data.csv") + " --seed 5")
              .exit_code == 0);
  const RunResult train = run_cli(
      dir, "train --data " + dir.file("data.csv") + " --schema " + dir.file("data.csv.schema") +
               " --config " + dir.file("run.ini") + " --out " + dir.file("model.ckpt") +
               " --log " + dir.file("loss.csv"));
  CHECK(train.exit_code == 2);
  CHECK(train.output.find("numerical failure") != std::string::npos);
}
