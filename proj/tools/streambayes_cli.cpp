#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "streambayes/streambayes.h"

namespace fs = std::filesystem;

namespace {

// 0 success, 1 usage, 2 data error, 3 numeric failure.
enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

int exit_code(sb_status st) {
  switch (st) {
    case SB_OK: return kOk;
    case SB_USAGE:
    case SB_CONFIG:
    case SB_INVALID_PARAMETER: return kUsage;
    case SB_DEGENERATE_EVIDENCE:
    case SB_NUMERICAL:
    case SB_UNDEFINED_VARIANCE_MEAN:
    case SB_INTERNAL: return kNumeric;
    default: return kData;
  }
}

struct Failure {
  int code;
};

std::string usage_text;

void check(sb_status st) {
  if (st == SB_OK) return;
  std::cerr << "error: " << sb_last_error() << "\n";
  if (st == SB_USAGE) std::cerr << usage_text;
  throw Failure{exit_code(st)};
}

[[noreturn]] void usage_error(const std::string& msg) {
  std::cerr << "error: " << msg << "\n" << usage_text;
  throw Failure{kUsage};
}

void require_readable(const std::string& path, const char* flag) {
  if (path == "-") return;
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: " << flag << " '" << path << "' is not readable\n";
    throw Failure{kData};
  }
}

void require_writable_dir(const std::string& path, const char* flag) {
  const auto parent = fs::absolute(path).parent_path();
  std::error_code ec;
  if (!fs::is_directory(parent, ec)) {
    std::cerr << "error: " << flag << " '" << path << "': directory '" << parent.string() << "' does not exist\n";
    throw Failure{kData};
  }
}

struct Owned {
  char* s = nullptr;
  ~Owned() { sb_string_free(s); }
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.flush();
  if (!out) {
    out.close();
    std::remove(path.c_str());
    std::cerr << "error: cannot write '" << path << "'\n";
    throw Failure{kData};
  }
}

sb_algorithm parse_algo(const std::string& name) {
  if (name == "vmp") return SB_ALGO_VMP;
  if (name == "is") return SB_ALGO_IS;
  usage_error("--algo must be vmp or is");
}

struct LearnArgs {
  std::string model, data, out, svi, log, format = "text";
  std::size_t batch_size = 1000;
  int workers = 1;
  std::uint64_t seed = 0;
};

int cmd_learn(const LearnArgs& a) {
  sb_learn_config cfg;
  sb_learn_config_init(&cfg);
  cfg.batch_size = a.batch_size;
  cfg.workers = a.workers;
  cfg.seed = a.seed;
  if (!a.svi.empty()) {
    std::istringstream in(a.svi);
    char comma = 0;
    if (!(in >> cfg.svi_kappa >> comma >> cfg.svi_tau) || comma != ',' || !in.eof())
      usage_error("--svi expects kappa,tau");
    cfg.use_svi = 1;
  }
  require_readable(a.data, "--data");
  require_writable_dir(a.out, "--out");
  if (!a.log.empty()) require_writable_dir(a.log, "--log");

  sb_stream* stream = nullptr;
  check(sb_stream_open(a.data.c_str(), sb_template_is_dynamic(a.model.c_str()), &stream));
  std::unique_ptr<sb_stream, void (*)(sb_stream*)> stream_guard(stream, sb_stream_free);
  sb_learner* learner = nullptr;
  check(sb_learner_new(a.model.c_str(), stream, &learner));
  std::unique_ptr<sb_learner, void (*)(sb_learner*)> learner_guard(learner, sb_learner_free);

  std::ostringstream log;
  std::size_t total = 0;
  long batches = 0;
  double last_elbo = 0.0;
  while (true) {
    int done = 0;
    long index = 0;
    std::size_t n = 0;
    double elbo = 0.0;
    check(sb_learner_step(learner, stream, &cfg, &done, &index, &n, &elbo));
    if (done) break;
    log << index << '\t' << n << '\t' << std::setprecision(17) << elbo << '\n';
    total += n;
    ++batches;
    last_elbo = elbo;
  }

  Owned json;
  check(sb_learner_to_json(learner, &json.s));
  write_file(a.out, json.s);
  if (!a.log.empty()) {
    const bool fresh = !fs::exists(a.log) || fs::file_size(a.log) == 0;
    std::ofstream out(a.log, std::ios::app);
    if (fresh) out << "batch\tinstances\telbo\n";
    out << log.str();
    if (!out) {
      std::remove(a.out.c_str());
      std::cerr << "error: cannot write '" << a.log << "'\n";
      throw Failure{kData};
    }
  }

  if (a.format == "json") {
    std::cout << "{\"batches\": " << batches << ", \"instances\": " << total << ", \"final_elbo\": "
              << std::setprecision(17) << last_elbo << ", \"out\": \"" << a.out << "\"}\n";
  } else {
    Owned text;
    check(sb_learner_render(learner, &text.s));
    std::cout << text.s;
  }
  return kOk;
}

struct InferArgs {
  std::string model, evidence, target, algo = "vmp", format = "text";
  long samples = 10000;
  std::uint64_t seed = 0;
  int workers = 1;
};

sb_infer_config infer_config(const std::string& algo, long samples, std::uint64_t seed, int workers) {
  sb_infer_config cfg;
  sb_infer_config_init(&cfg);
  cfg.algorithm = parse_algo(algo);
  cfg.samples = samples;
  cfg.seed = seed;
  cfg.workers = workers;
  return cfg;
}

sb_model* load_model(const std::string& path) {
  require_readable(path, "--model");
  sb_model* model = nullptr;
  check(sb_model_load(path.c_str(), &model));
  return model;
}

int cmd_infer(const InferArgs& a) {
  const auto cfg = infer_config(a.algo, a.samples, a.seed, a.workers);
  std::unique_ptr<sb_model, void (*)(sb_model*)> model(load_model(a.model), sb_model_free);
  sb_posterior* post = nullptr;
  check(sb_infer(model.get(), a.evidence.c_str(), a.target.c_str(), &cfg, &post));
  std::unique_ptr<sb_posterior, void (*)(sb_posterior*)> guard(post, sb_posterior_free);
  Owned text;
  check(sb_posterior_render(post, a.format == "json", &text.s));
  std::cout << text.s;
  return kOk;
}

struct FilterArgs {
  std::string model, data, target, algo = "vmp", format = "text";
  int horizon = 0;
  long samples = 10000;
  std::uint64_t seed = 0;
};

int cmd_filter(const FilterArgs& a) {
  const auto cfg = infer_config(a.algo, a.samples, a.seed, 1);
  std::unique_ptr<sb_model, void (*)(sb_model*)> model(load_model(a.model), sb_model_free);
  if (!sb_model_is_dynamic(model.get())) {
    std::cerr << "error: '" << a.model << "' is a static model; filter needs a dynamic model\n";
    throw Failure{kData};
  }
  require_readable(a.data, "--data");
  sb_stream* stream = nullptr;
  check(sb_stream_open(a.data.c_str(), 1, &stream));
  std::unique_ptr<sb_stream, void (*)(sb_stream*)> stream_guard(stream, sb_stream_free);
  sb_filter* filter = nullptr;
  check(sb_filter_new(model.get(), stream, a.target.c_str(), &cfg, &filter));
  std::unique_ptr<sb_filter, void (*)(sb_filter*)> filter_guard(filter, sb_filter_free);
  while (true) {
    Owned lines;
    int done = 0;
    check(sb_filter_step(filter, stream, a.horizon, a.format == "json", &lines.s, &done));
    if (done) break;
    std::cout << lines.s;
  }
  return kOk;
}

struct SampleArgs {
  std::string model, out;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

int cmd_sample(const SampleArgs& a) {
  std::unique_ptr<sb_model, void (*)(sb_model*)> model(load_model(a.model), sb_model_free);
  require_writable_dir(a.out, "--out");
  check(sb_sample_to_file(model.get(), a.n, a.seed, a.out.c_str()));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming Bayesian network learning and inference"};
  app.require_subcommand(1);
  std::string format = "text";

  LearnArgs learn;
  auto* l = app.add_subcommand("learn", "Learn a template model from an ARFF stream");
  l->add_option("--model", learn.model, "Template id: gmm[:k=K], nb[:class=C], blr[:target=Y], fa[:factors=F], "
                                        "hmm[:k=K], kf[:hidden=H], custom:<spec-file>")
      ->required();
  l->add_option("--data", learn.data, "ARFF file, or - for standard input")->required();
  l->add_option("--out", learn.out, "Output model file (JSON)")->required();
  l->add_option("--batch-size", learn.batch_size, "Instances per batch")->capture_default_str();
  l->add_option("--workers", learn.workers, "Worker threads")->capture_default_str();
  l->add_option("--svi", learn.svi, "Use natural-gradient steps with kappa,tau");
  l->add_option("--seed", learn.seed, "Seed")->capture_default_str();
  l->add_option("--log", learn.log, "Append per-batch ELBO lines (tab-separated) to this file");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Posterior marginals of a static model");
  i->add_option("--model", infer.model, "Model file")->required();
  i->add_option("--evidence", infer.evidence, "name=value,...");
  i->add_option("--target", infer.target, "name,... (default: every unobserved variable)");
  i->add_option("--algo", infer.algo, "vmp or is")->capture_default_str();
  i->add_option("--samples", infer.samples, "Importance samples")->capture_default_str();
  i->add_option("--seed", infer.seed, "Seed")->capture_default_str();
  i->add_option("--workers", infer.workers, "Worker threads")->capture_default_str();

  FilterArgs filter;
  auto* f = app.add_subcommand("filter", "Filtered and predictive posteriors over a dynamic stream");
  f->add_option("--model", filter.model, "Dynamic model file")->required();
  f->add_option("--data", filter.data, "Dynamic ARFF file, or - for standard input")->required();
  f->add_option("--target", filter.target, "Slice variable")->required();
  f->add_option("--horizon", filter.horizon, "Prediction horizon; 0 prints filtered posteriors only")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  f->add_option("--algo", filter.algo, "vmp or is")->capture_default_str();
  f->add_option("--samples", filter.samples, "Importance samples per step")->capture_default_str();
  f->add_option("--seed", filter.seed, "Seed")->capture_default_str();

  SampleArgs sample;
  auto* s = app.add_subcommand("sample", "Write ancestral samples of a static model as ARFF");
  s->add_option("--model", sample.model, "Model file")->required();
  s->add_option("--n", sample.n, "Number of samples")->required();
  s->add_option("--seed", sample.seed, "Seed")->capture_default_str();
  s->add_option("--out", sample.out, "Output ARFF file")->required();

  for (auto* sub : {l, i, f})
    sub->add_option("--format", format, "text or json")->capture_default_str()->check(CLI::IsMember({"text", "json"}));

  usage_text = app.help();
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << usage_text;
    return kUsage;
  }

  try {
    if (*l) {
      usage_text = l->help();
      learn.format = format;
      return cmd_learn(learn);
    }
    if (*i) {
      usage_text = i->help();
      infer.format = format;
      return cmd_infer(infer);
    }
    if (*f) {
      usage_text = f->help();
      filter.format = format;
      return cmd_filter(filter);
    }
    usage_text = s->help();
    return cmd_sample(sample);
  } catch (const Failure& failure) {
    return failure.code;
  }
}
