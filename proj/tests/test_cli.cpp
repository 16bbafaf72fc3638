#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

using nlohmann::json;

// Drives the installed binary the way a user would: one shell command per
// invocation, artifacts inspected afterwards from disk.

namespace {

bool exists(const std::string& path) {
  return std::filesystem::exists(path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing file: " << path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  REQUIRE(out.good());
}

int run_cli(const std::string& args, std::string* stdout_text = nullptr) {
  static int counter = 0;
  std::string capture = "cli_capture_" + std::to_string(counter++) + ".txt";
  std::string cmd = std::string(TALLFIT_CLI_PATH) + " " + args + " > " +
                    capture + " 2> /dev/null";
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  if (stdout_text) *stdout_text = read_file(capture);
  std::remove(capture.c_str());
  return WEXITSTATUS(status);
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Shared dataset: four practices, 400 rows, every covariate discrete so the
// weighted method must reproduce the full fit exactly.
void ensure_sim() {
  static bool done = false;
  if (done) return;
  REQUIRE(run_cli("simulate itsa --n 400 --j 4 --seed 5 --tau2 0.05 "
                  "--out-prefix cli_itsa") == 0);
  done = true;
}

const std::string kData = "--data cli_itsa.csv --schema cli_itsa.schema ";
const std::string kModel =
    "--terms time --terms case --terms int1 --terms int2 ";

double coef_of(const json& result, const std::string& name) {
  for (const auto& c : result["coefficients"])
    if (c["name"] == name) return c["estimate"].get<double>();
  FAIL("no coefficient named " << name);
  return 0.0;
}

}  // namespace

TEST_CASE("simulate is deterministic and announces its outputs") {
  std::string out;
  REQUIRE(run_cli("simulate itsa --n 400 --j 4 --seed 5 --tau2 0.05 "
                  "--out-prefix cli_simA",
                  &out) == 0);
  CHECK(out == "wrote cli_simA.csv, cli_simA.schema, cli_simA.truth.json\n");
  REQUIRE(exists("cli_simA.csv"));
  REQUIRE(exists("cli_simA.schema"));
  REQUIRE(exists("cli_simA.truth.json"));

  CHECK(lines_of(read_file("cli_simA.csv"))[0] ==
        "practice,time,case,int1,int2,event");

  json truth = json::parse(read_file("cli_simA.truth.json"));
  CHECK(truth["plan"] == "itsa");
  CHECK(truth["seed"] == 5);
  CHECK(truth["tau2"] == 0.05);
  CHECK(truth["b"].size() == 4);

  REQUIRE(run_cli("simulate itsa --n 400 --j 4 --seed 5 --tau2 0.05 "
                  "--out-prefix cli_simB") == 0);
  CHECK(read_file("cli_simB.csv") == read_file("cli_simA.csv"));
  CHECK(read_file("cli_simB.schema") == read_file("cli_simA.schema"));
  CHECK(read_file("cli_simB.truth.json") == read_file("cli_simA.truth.json"));

  REQUIRE(run_cli("simulate itsa --n 400 --j 4 --seed 6 --tau2 0.05 "
                  "--out-prefix cli_simC") == 0);
  CHECK(read_file("cli_simC.csv") != read_file("cli_simA.csv"));

  for (const char* prefix : {"cli_simA", "cli_simB", "cli_simC"})
    for (const char* suffix : {".csv", ".schema", ".truth.json"})
      std::remove((std::string(prefix) + suffix).c_str());
}

TEST_CASE("fit writes a result file and reports the method and runtime") {
  ensure_sim();
  std::string out;
  REQUIRE(run_cli("fit " + kData + kModel + "--method full --out cli_full.json",
                  &out) == 0);
  CHECK(out.rfind("wrote cli_full.json (full, ", 0) == 0);
  CHECK(out.find("s)\n") != std::string::npos);

  json full = json::parse(read_file("cli_full.json"));
  CHECK(full["method"] == "full");
  CHECK(full["family"] == "bernoulli");
  CHECK(full["link"] == "logit");
  CHECK(full["converged"] == true);
  CHECK(full["n_obs"] == 400);
  CHECK(full["n_source_rows"] == 400);
  REQUIRE(full["coefficients"].size() == 5);
  CHECK(full["coefficients"][0]["name"] == "intercept");
  CHECK(full["coefficients"][1]["name"] == "time");
  CHECK(full["tau2"].get<double>() >= 0.0);
  CHECK(std::isfinite(full["loglik"].get<double>()));
  CHECK(full["quad_points"] == 15);
}

TEST_CASE("weighted fit matches the full fit end to end") {
  ensure_sim();
  REQUIRE(run_cli("fit " + kData + kModel +
                  "--method full --out cli_id_full.json") == 0);
  REQUIRE(run_cli("fit " + kData + kModel +
                  "--method weighted --out cli_id_wt.json") == 0);
  json full = json::parse(read_file("cli_id_full.json"));
  json wt = json::parse(read_file("cli_id_wt.json"));

  for (const char* name : {"intercept", "time", "case", "int1", "int2"})
    CHECK(std::abs(coef_of(wt, name) - coef_of(full, name)) < 1e-6);
  CHECK(std::abs(wt["loglik"].get<double>() - full["loglik"].get<double>()) <
        1e-7);
  CHECK(std::abs(wt["tau2"].get<double>() - full["tau2"].get<double>()) <
        1e-6);

  // Four practices x 19 times x case x event caps the distinct-row count.
  CHECK(wt["n_obs"].get<int>() <= 304);
  CHECK(wt["n_source_rows"] == 400);
}

TEST_CASE("usage problems exit 1 and never produce the output file") {
  ensure_sim();
  CHECK(run_cli("fit " + kData + kModel +
                "--family gamma --out cli_never.json") == 1);
  CHECK(run_cli("fit " + kData + kModel +
                "--method mystery --out cli_never.json") == 1);
  CHECK(run_cli("simulate itsa --beta 1,nope --out-prefix cli_never") == 1);
  CHECK(run_cli("designs --out cli_never.csv") == 1);
  CHECK(run_cli("designs --data cli_itsa.csv --out cli_never.csv") == 1);
  CHECK(run_cli("designs --grid-plan lottery --out cli_never.csv") == 1);
  CHECK(!exists("cli_never.json"));
  CHECK(!exists("cli_never.csv"));

  // Flag-level mistakes are caught before any command runs; the exact code
  // is the parser's, but it is never success.
  CHECK(run_cli("fit --schema cli_itsa.schema") != 0);
  CHECK(run_cli("simulate itsa --bogus 3") != 0);
  CHECK(run_cli("") != 0);
}

TEST_CASE("data problems exit 2") {
  ensure_sim();
  CHECK(run_cli("fit --data cli_missing.csv --schema cli_itsa.schema " +
                kModel + "--out cli_never.json") == 2);

  write_file("cli_bad.csv", "g,x,y\nc1,0,0\nc1,1,2\nc2,0,1\nc2,1,0\n");
  write_file("cli_bad.schema",
             "g = cluster\nx = covariate:binary\ny = outcome:binary\n");
  CHECK(run_cli("fit --data cli_bad.csv --schema cli_bad.schema --terms x "
                "--out cli_never.json") == 2);
  CHECK(!exists("cli_never.json"));
  std::remove("cli_bad.csv");
  std::remove("cli_bad.schema");
}

TEST_CASE("numeric failure exits 3 and leaves nothing behind") {
  ensure_sim();
  CHECK(run_cli("fit " + kData + kModel +
                "--method subsample --grid-plan itsa --initial-size 60 "
                "--target-size 100 --grad-tol 1e-300 --seed 2 "
                "--out cli_sub_fail.json --history-out cli_sub_fail.csv") ==
        3);
  CHECK(!exists("cli_sub_fail.json"));
  CHECK(!exists("cli_sub_fail.json.tmp"));
  CHECK(!exists("cli_sub_fail.csv"));
  CHECK(!exists("cli_sub_fail.csv.tmp"));
}

TEST_CASE("a failure after staging removes the partial outputs") {
  ensure_sim();
  // The result JSON is staged before the history request is rejected (full
  // fits keep no iteration trace), so the rejection must sweep the .tmp away.
  CHECK(run_cli("fit " + kData + kModel +
                "--method full --out cli_res.json --history-out "
                "cli_hist.csv") == 1);
  CHECK(!exists("cli_res.json"));
  CHECK(!exists("cli_res.json.tmp"));
  CHECK(!exists("cli_hist.csv"));
  CHECK(!exists("cli_hist.csv.tmp"));
}

TEST_CASE("subsample runs are reproducible from the seed") {
  ensure_sim();
  const std::string flags =
      "fit " + kData + kModel +
      "--method subsample --grid-plan itsa --initial-size 60 "
      "--target-size 120 --seed 7 ";
  REQUIRE(run_cli(flags + "--out cli_subA.json --history-out cli_histA.csv") ==
          0);
  REQUIRE(run_cli(flags + "--out cli_subB.json --history-out cli_histB.csv") ==
          0);

  CHECK(read_file("cli_histA.csv") == read_file("cli_histB.csv"));
  json a = json::parse(read_file("cli_subA.json"));
  json b = json::parse(read_file("cli_subB.json"));
  a.erase("runtime_seconds");
  b.erase("runtime_seconds");
  CHECK(a == b);

  CHECK(a["method"] == "subsample");
  CHECK(a["converged"] == true);
  CHECK(a["steps"].get<int>() >= 1);
  CHECK(a["n_obs"].get<int>() >= 120);
  CHECK(a["n_obs"].get<int>() < 400);

  auto history = lines_of(read_file("cli_histA.csv"));
  CHECK(history[0] ==
        "iteration,chosen_design,realized_design,time_chosen,case_chosen,"
        "int1_chosen,int2_chosen,time_realized,case_realized,int1_realized,"
        "int2_realized,utility,rows_added,size_after");
  CHECK(history.size() == 1 + a["steps"].get<size_t>());
}

TEST_CASE("compare tabulates methods side by side") {
  ensure_sim();
  std::string out;
  REQUIRE(run_cli("compare " + kData + kModel +
                  "--methods full,weighted --repeats 1 --out cli_cmp.csv",
                  &out) == 0);
  CHECK(out == "wrote cli_cmp.csv\n");

  auto rows = lines_of(read_file("cli_cmp.csv"));
  REQUIRE(rows.size() >= 2);
  CHECK(rows[0] == "quantity,scale,full,full_se,weighted,weighted_se");

  std::map<std::string, std::vector<std::string>> by_quantity;
  for (size_t i = 1; i < rows.size(); ++i) {
    auto fields = split_csv(rows[i]);
    REQUIRE(fields.size() == 6);
    by_quantity[fields[0]] = fields;
  }

  REQUIRE(by_quantity.count("n_obs"));
  CHECK(by_quantity["n_obs"][2] == "400");
  CHECK(std::stoi(by_quantity["n_obs"][4]) <= 304);
  REQUIRE(by_quantity.count("converged"));
  CHECK(by_quantity["converged"][2] == "yes");
  CHECK(by_quantity["converged"][4] == "yes");
  CHECK(by_quantity.count("runtime_seconds"));
  CHECK(by_quantity.count("tau2"));

  REQUIRE(by_quantity.count("time"));
  const auto& time_row = by_quantity["time"];
  CHECK(time_row[1] == "odds_ratio");
  double or_full = std::stod(time_row[2]);
  double or_wt = std::stod(time_row[4]);
  CHECK(or_wt == doctest::Approx(or_full).epsilon(1e-5));
  CHECK(std::stod(time_row[3]) > 0.0);
  CHECK(std::stod(time_row[5]) > 0.0);
}

TEST_CASE("collapse writes the weighted dataset") {
  ensure_sim();
  std::string out;
  REQUIRE(run_cli("collapse " + kData + "--out cli_col.csv", &out) == 0);
  CHECK(out == "wrote cli_col.csv\n");

  auto rows = lines_of(read_file("cli_col.csv"));
  CHECK(rows[0] == "practice,time,case,int1,int2,event,weight");
  CHECK(rows.size() <= 1 + 304);

  double total = 0.0;
  for (size_t i = 1; i < rows.size(); ++i) {
    auto fields = split_csv(rows[i]);
    REQUIRE(fields.size() == 7);
    double w = std::stod(fields.back());
    CHECK(w >= 1.0);
    total += w;
  }
  CHECK(total == 400.0);
}

TEST_CASE("designs enumerates grids from plans, flags, and data") {
  ensure_sim();
  REQUIRE(run_cli("designs --grid-plan itsa --out cli_des.csv") == 0);
  auto rows = lines_of(read_file("cli_des.csv"));
  REQUIRE(rows.size() == 1 + 152);
  CHECK(rows[0] == "design_index,time,case,int1,int2");
  auto first = split_csv(rows[1]);
  auto last = split_csv(rows.back());
  CHECK(std::stod(first[0]) == 0.0);
  CHECK(std::stod(first[1]) == 1.0);
  CHECK(std::stod(first[4]) == 0.0);
  CHECK(std::stod(last[0]) == 151.0);
  CHECK(std::stod(last[1]) == 19.0);
  CHECK(std::stod(last[2]) == 1.0);
  CHECK(std::stod(last[3]) == 1.0);
  CHECK(std::stod(last[4]) == 1.0);

  REQUIRE(run_cli("designs --levels a=0,1 --levels b=1,2,3 "
                  "--out cli_des2.csv") == 0);
  auto rows2 = lines_of(read_file("cli_des2.csv"));
  CHECK(rows2[0] == "design_index,a,b");
  CHECK(rows2.size() == 1 + 6);

  REQUIRE(run_cli("designs --levels u=0,1 --levels v=0,1 --exclusive u,v "
                  "--out cli_des3.csv") == 0);
  CHECK(lines_of(read_file("cli_des3.csv")).size() == 1 + 3);

  REQUIRE(run_cli("designs " + kData + kModel + "--out cli_des4.csv") == 0);
  auto rows4 = lines_of(read_file("cli_des4.csv"));
  CHECK(rows4[0] == "design_index,time,case,int1,int2");
  CHECK(rows4.size() >= 1 + 8);
  CHECK(rows4.size() <= 1 + 152);
}

TEST_CASE("fitted values land next to the data") {
  ensure_sim();
  REQUIRE(run_cli("fit " + kData + kModel +
                  "--method full --out cli_f.json --fitted-out cli_fv.csv") ==
          0);
  auto rows = lines_of(read_file("cli_fv.csv"));
  REQUIRE(rows.size() == 1 + 400);
  CHECK(rows[0] == "row,cluster,outcome,fitted");
  for (size_t i = 1; i < rows.size(); i += 37) {
    auto fields = split_csv(rows[i]);
    REQUIRE(fields.size() == 4);
    CHECK(fields[1].rfind("p", 0) == 0);
    double y = std::stod(fields[2]);
    CHECK((y == 0.0 || y == 1.0));
    double mu = std::stod(fields[3]);
    CHECK(mu > 0.0);
    CHECK(mu < 1.0);
  }

  // Only the full fit carries per-row fitted values; the rejection must not
  // leave the staged result behind either.
  CHECK(run_cli("fit " + kData + kModel +
                "--method weighted --out cli_w.json --fitted-out "
                "cli_wv.csv") == 1);
  CHECK(!exists("cli_w.json"));
  CHECK(!exists("cli_w.json.tmp"));
  CHECK(!exists("cli_wv.csv"));
  CHECK(!exists("cli_wv.csv.tmp"));
}

TEST_CASE("artifacts clean up") {
  for (const char* name :
       {"cli_itsa.csv", "cli_itsa.schema", "cli_itsa.truth.json",
        "cli_full.json", "cli_id_full.json", "cli_id_wt.json", "cli_subA.json",
        "cli_subB.json", "cli_histA.csv", "cli_histB.csv", "cli_cmp.csv",
        "cli_col.csv", "cli_des.csv", "cli_des2.csv", "cli_des3.csv",
        "cli_des4.csv", "cli_f.json", "cli_fv.csv"})
    std::remove(name);

  // Nothing in this suite may leak a staging file.
  for (const auto& entry : std::filesystem::directory_iterator(".")) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("cli_", 0) == 0) {
      CHECK_MESSAGE(name.find(".tmp") == std::string::npos,
                    "staging residue: " << name);
    }
  }
}
