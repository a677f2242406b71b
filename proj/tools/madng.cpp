// madng: run job files, single commands, or serve the pipe protocol.

#include <unistd.h>

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mad/protocol.hpp"

namespace {

using namespace mad;

std::string quote(const std::string& s) { return "\"" + s + "\""; }

// Writes a table, restricted to some columns when asked.
void output(const MTable& t0, const std::string& out, const std::string& format, const std::vector<std::string>& cols) {
  MTable t = t0;
  if (!cols.empty()) {
    MTable s(t0.name(), t0.type());
    for (const auto& c : cols) s.add_column(c, t0.column(c));
    t = std::move(s);
  }
  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw CommandError("cannot write '" + out + "'");
  }
  std::ostream& os = out.empty() ? std::cout : file;
  if (format == "csv")
    write_csv(t, os);
  else
    write_tfs(t, os);
}

int guarded(const std::function<void()>& f) {
  try {
    f();
    return 0;
  } catch (const ParseError& e) {
    std::cerr << "madng: parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "madng: error: " << e.what() << "\n";
    return 1;
  }
}

struct Common {
  std::string seqfile, sequence = "ring", range, out, format = "tfs", plot;
};

void add_common(CLI::App* c, Common& o) {
  c->add_option("--seq", o.seqfile, "lattice/job file defining the sequence")->required()->check(CLI::ExistingFile);
  c->add_option("--sequence", o.sequence, "sequence or line name");
  c->add_option("--range", o.range, "row range, e.g. qf[2]/qd[3]");
  c->add_option("--out", o.out, "output file (default stdout)");
  c->add_option("--format", o.format, "tfs or csv")->check(CLI::IsMember({"tfs", "csv"}));
  c->add_option("--plot", o.plot, "comma separated columns, written as csv");
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string w; std::getline(ss, w, ',');)
    if (!w.empty()) out.push_back(w);
  return out;
}

// load the lattice, run `cmd` and emit the named table
MTable run_command(const Common& o, const std::string& cmd, const std::string& table) {
  Env env;
  Job job(env, std::cerr);
  job.run_file(o.seqfile);
  job.run_source(cmd);
  const auto cols = split(o.plot);
  output(*env.table(table), o.out, cols.empty() ? o.format : "csv", cols);
  return *env.table(table);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"madng: desk-scale beam optics"};
  app.require_subcommand(1);

  std::string jobfile;
  auto* run = app.add_subcommand("run", "execute a job file");
  run->add_option("job", jobfile, "job file")->required();

  bool stdio = false;
  auto* serve = app.add_subcommand("serve", "answer EXEC requests on stdin/stdout");
  serve->add_flag("--stdio", stdio, "use stdin/stdout (the only transport)");

  Common tw, sv, tk, co, ma;
  int order = 1;
  auto* twiss = app.add_subcommand("twiss", "optics functions");
  add_common(twiss, tw);
  twiss->add_option("--order", order, "map order, 2 adds chromaticity")->check(CLI::Range(1, 8));

  auto* survey = app.add_subcommand("survey", "global geometry");
  add_common(survey, sv);

  int turns = 1;
  std::vector<double> x0;
  auto* track = app.add_subcommand("track", "track one particle");
  add_common(track, tk);
  track->add_option("--turns", turns, "number of turns")->check(CLI::PositiveNumber);
  track->add_option("--x0", x0, "initial x px y py t pt")->expected(0, 6);

  auto* cofind = app.add_subcommand("cofind", "closed orbit");
  add_common(cofind, co);

  std::vector<std::string> vary, constraints;
  double tol = 0, fmin = 1e-10;
  int maxcall = 100;
  auto* match = app.add_subcommand("match", "vary knobs so that twiss constraints vanish");
  add_common(match, ma);
  match->add_option("--vary", vary, "knob name (repeatable)")->required();
  match->add_option("--constraint", constraints, "name=expression (repeatable), e.g. q1=twiss.q1-6.31")->required();
  match->add_option("--tol", tol, "tolerance of every constraint");
  match->add_option("--fmin", fmin, "penalty target");
  match->add_option("--maxcall", maxcall, "maximum command calls");
  match->add_option("--order", order, "twiss order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  auto range = [](const Common& o) { return o.range.empty() ? std::string() : ", range=" + quote(o.range); };
  auto seq = [](const Common& o) { return "sequence=" + o.sequence; };

  if (*run)
    return guarded([&] {
      Env env;
      Job job(env);
      job.run_file(jobfile);
    });
  if (*serve) {
    if (!stdio) {
      std::cerr << "madng: serve needs --stdio\n";
      return 2;
    }
    return guarded([&] {
      Env env;
      proto::serve(
          [](char* b, std::size_t n) -> std::size_t {
            const ssize_t k = ::read(STDIN_FILENO, b, n);
            return k > 0 ? std::size_t(k) : 0;
          },
          [](const std::string& s) {
            std::cout.write(s.data(), std::streamsize(s.size()));
            std::cout.flush();
          },
          env);
    });
  }
  if (*twiss)
    return guarded([&] {
      run_command(tw, "twiss, " + seq(tw) + ", order=" + std::to_string(order) + range(tw) + ";", "twiss");
    });
  if (*survey) return guarded([&] { run_command(sv, "survey, " + seq(sv) + range(sv) + ";", "survey"); });
  if (*track)
    return guarded([&] {
      std::string c = "track, " + seq(tk) + ", nturn=" + std::to_string(turns) + range(tk);
      const char* n[6] = {"x", "px", "y", "py", "t", "pt"};
      for (std::size_t i = 0; i < x0.size(); ++i) c += std::string(", ") + n[i] + "=" + lat::fmt_num(x0[i]);
      run_command(tk, c + ";", "track");
    });
  if (*cofind) return guarded([&] { run_command(co, "cofind, " + seq(co) + ";", "cofind"); });
  if (*match)
    return guarded([&] {
      std::string c = "match, command=twiss, " + seq(ma) + ", order=" + std::to_string(order) +
                      ", fmin=" + lat::fmt_num(fmin) + ", maxcall=" + std::to_string(maxcall) + ", info=1;\n";
      for (const auto& v : vary) c += "vary, name=" + v + ";\n";
      for (const auto& k : constraints) {
        const auto eq = k.find('=');
        if (eq == std::string::npos) throw CommandError("constraint '" + k + "' is not name=expression");
        c += "constraint, name=" + k.substr(0, eq) + ", expr:=" + k.substr(eq + 1) + ", tol=" + lat::fmt_num(tol) + ";\n";
      }
      c += "endmatch;\n";
      const MTable t = run_command(ma, c, "match");
      const auto status = std::get<std::string>(t.header("status"));
      if (status != "SUCCESS") throw CommandError("match: " + status);
    });
  return 2;
}
