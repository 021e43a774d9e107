#include "doctest.h"
#include "test_helpers.hpp"

#include <cstdlib>
#include <string>
#include <sys/wait.h>

#ifndef ZIPFA_CLI_PATH
#error "ZIPFA_CLI_PATH must name the CLI executable"
#endif

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stdout captured to a file and stderr discarded.
Run cli(const std::string& args, const std::filesystem::path& dir) {
  const auto out = dir / "stdout.txt";
  const std::string cmd = std::string("'") + ZIPFA_CLI_PATH + "' " + args + " > '" +
                          out.string() + "' 2> '" + (dir / "stderr.txt").string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testutil::read_text(out);
  return r;
}

}  // namespace

TEST_CASE("CLI simulate, fit, cv and diagnose") {
  const auto dir = testutil::scratch_dir("cli");
  const std::string d = (dir / "data").string();
  Run r = cli("simulate --setting 1 --zero-pct 0.2 --seed 3 --n 40 --m 24 --output '" + d + "'", dir);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("tau=") == 0);
  CHECK(std::filesystem::exists(dir / "data" / "manifest.json"));

  const std::string counts = d + "/counts.csv";
  const std::string model = (dir / "m.json").string();
  r = cli("fit --input '" + counts + "' --rank 2 --output '" + model + "'", dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("rank=2\n") == 0);
  CHECK(r.out.find("converged=true") != std::string::npos);
  const std::string first = testutil::read_text(model);
  r = cli("fit --input '" + counts + "' --rank 2 --output '" + model + "'", dir);
  CHECK(testutil::read_text(model) == first);

  CHECK(cli("fit --input '" + counts + "' --rank 0", dir).code == 2);
  CHECK(cli("fit --input '" + counts + "' --rank 50", dir).code == 2);
  CHECK(cli("fit --input '" + (dir / "missing.csv").string() + "' --rank 2", dir).code == 2);
  CHECK(cli("fit --input '" + counts + "' --rank 2 --max-iter 1", dir).code == 3);

  const std::string cv = (dir / "cv.csv").string();
  r = cli("cv --input '" + counts + "' --ranks 3:3 --output '" + cv + "'", dir);
  CHECK(r.code == 0);
  CHECK(r.out == "3\n");
  r = cli("cv --input '" + counts + "' --ranks 1:2 --folds 3 --repeats 3 --seed 4 --output '" + cv + "'", dir);
  CHECK(r.code == 0);
  const std::string table = testutil::read_text(cv);
  int total_rows = 0;
  for (int rep = 0; rep < 3; ++rep)
    for (int rank = 1; rank <= 2; ++rank)
      if (table.find("\n" + std::to_string(rep) + "," + std::to_string(rank) + ",") != std::string::npos)
        ++total_rows;
  CHECK(total_rows == 6);
  CHECK(table.find("repeat,rank,total_loglik,selected") != std::string::npos);
  CHECK(cli("cv --input '" + counts + "' --ranks 4:2", dir).code == 2);
  CHECK(cli("cv --input '" + counts + "' --ranks 0:2", dir).code == 2);
  CHECK(cli("cv --input '" + counts + "' --ranks 1:99", dir).code == 2);

  const std::string diag = (dir / "diag.csv").string();
  CHECK(cli("diagnose --input '" + counts + "' --output '" + diag + "'", dir).code == 0);
  CHECK(testutil::read_text(diag).find("fit,intercept,slope,points,status") != std::string::npos);
  CHECK(cli("diagnose --input '" + (dir / "nope.csv").string() + "' --output '" + diag + "'", dir).code == 2);
}

TEST_CASE("CLI simulate edge cases") {
  const auto dir = testutil::scratch_dir("cli_sim");
  CHECK(cli("simulate --setting 5 --zero-pct 0.95 --output '" + (dir / "a").string() + "'", dir).code == 2);
  CHECK(cli("simulate --setting 7 --zero-pct 0.2 --output '" + (dir / "b").string() + "'", dir).code == 2);
  Run r = cli("simulate --setting 1 --zero-pct 0 --n 20 --m 10 --output '" + (dir / "c").string() + "'", dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("tau=NA") == 0);
  CHECK(testutil::read_text(dir / "c" / "mask.csv") == "row_index,col_index\n");
}

TEST_CASE("CLI benchmark") {
  const auto dir = testutil::scratch_dir("cli_bench");
  const std::string out = (dir / "b.csv").string();
  Run r = cli("benchmark --settings 1 --zero-pcts 0.2 --replicates 2 --methods logsvd --seed 5 --output '" + out + "'", dir);
  CHECK(r.code == 0);
  CHECK(r.out == "records=2\n");
  const std::string first = testutil::read_text(out);
  cli("benchmark --settings 1 --zero-pcts 0.2 --replicates 2 --methods logsvd --seed 5 --output '" + out + "'", dir);
  CHECK(testutil::read_text(out) == first);
  CHECK(cli("benchmark --methods pca --output '" + out + "'", dir).code == 2);
}
