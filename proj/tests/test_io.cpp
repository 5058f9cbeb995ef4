#include <amoclust/io/checkpoint.hpp>
#include <amoclust/io/config.hpp>
#include <amoclust/io/dataset_io.hpp>
#include <amoclust/prior/preprocess.hpp>

#include <gtest/gtest.h>

#include <cstring>

using namespace amoclust;
using namespace amoclust::io;

namespace {

RunConfig small_config() {
  RunConfig c = desk_preset();
  c.model.d = 8;
  c.model.d_tok = 4;
  c.model.l_enc = 1;
  c.model.l_dec = 1;
  c.model.heads = 2;
  c.model.k_max = 4;
  c.train.prior.k_max = 4;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("amoclust_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string with_manifest(const std::string& bytes, const std::function<void(json&)>& edit) {
  constexpr std::size_t head = sizeof(kMagic) + sizeof(std::uint64_t);
  std::uint64_t len;
  std::memcpy(&len, bytes.data() + sizeof(kMagic), sizeof(len));
  json m = json::parse(bytes.substr(head, len));
  edit(m);
  const std::string text = m.dump();
  std::string out(kMagic, sizeof(kMagic));
  const std::uint64_t n = text.size();
  out.append(reinterpret_cast<const char*>(&n), sizeof(n));
  return out + text + bytes.substr(head + len);
}

}  // namespace

TEST(Checkpoint, RoundTripIsFloat32Exact) {
  const RunConfig c = small_config();
  Rng rng(1);
  Model m = Model::init(c.model, CinLossKind::kCe, rng);
  const std::string bytes = serialize_checkpoint(m, {c, 42});
  LoadedCheckpoint back = parse_checkpoint(bytes, "mem");
  EXPECT_EQ(back.info.step, 42);
  EXPECT_EQ(back.info.config.model.d, 8u);
  EXPECT_EQ(back.manifest.at("stored_precision"), "float32");
  const ParamRefs a = param_refs(m.pin), b = param_refs(back.model.pin);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i]->numel(); ++j)
      ASSERT_EQ((*b[i])[j], static_cast<double>(static_cast<float>((*a[i])[j])));
  // A second pass through float32 changes nothing.
  EXPECT_EQ(serialize_checkpoint(back.model, back.info), bytes);
}

TEST(Checkpoint, OrdinalHeadSurvives) {
  RunConfig c = small_config();
  c.train.cin_loss_kind = CinLossKind::kOrdinal;
  Rng rng(2);
  Model m = Model::init(c.model, CinLossKind::kOrdinal, rng);
  LoadedCheckpoint back = parse_checkpoint(serialize_checkpoint(m, {c, 1}), "mem");
  EXPECT_EQ(back.model.cin.kind, CinHead::kOrdinal);
}

TEST(Checkpoint, RejectsDamage) {
  const RunConfig c = small_config();
  Rng rng(3);
  Model m = Model::init(c.model, CinLossKind::kCe, rng);
  const std::string bytes = serialize_checkpoint(m, {c, 0});
  EXPECT_THROW(parse_checkpoint("nonsense", "x"), IoError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, 40), "x"), IoError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 4), "x"), IoError);
  EXPECT_THROW(parse_checkpoint(bytes + "xxxx", "x"), IoError);
  try {
    parse_checkpoint(with_manifest(bytes, [](json& j) { j["format_version"] = 2; }), "x");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  EXPECT_THROW(parse_checkpoint(with_manifest(bytes, [](json& j) { j["config"]["model"]["d"] = 16; }), "x"), IoError);
  EXPECT_THROW(parse_checkpoint(with_manifest(bytes, [](json& j) { j["params"][0]["name"] = "bogus"; }), "x"), IoError);
}

TEST(Checkpoint, FileRoundTrip) {
  const fs::path dir = scratch("ckpt");
  const RunConfig c = small_config();
  Rng rng(4);
  Model m = Model::init(c.model, CinLossKind::kCe, rng);
  save_checkpoint(dir / "sub" / "m.tcpf", m, {c, 5});
  EXPECT_EQ(load_checkpoint(dir / "sub" / "m.tcpf").info.step, 5);
  EXPECT_THROW(load_checkpoint(dir / "missing.tcpf"), IoError);
}

TEST(Config, PresetsAndOverrides) {
  const RunConfig d = parse_run_config(json::object());
  EXPECT_EQ(d.train.steps, 1000);
  EXPECT_EQ(d.train.batch_tasks, 8);
  const RunConfig p = parse_run_config(json{{"preset", "paper"}, {"train", {{"steps", 7}, {"warmup_steps", 3}}}});
  EXPECT_EQ(p.model.d, 512u);
  EXPECT_EQ(p.train.steps, 7);
  EXPECT_DOUBLE_EQ(p.train.peak_lr, 1e-4);
}

TEST(Config, RoundTripsThroughJson) {
  RunConfig c = small_config();
  c.train.pin_loss_kind = PinLossKind::kMatchSoftAcc;
  c.model.decoder = DecoderKind::kNaive;
  const RunConfig back = parse_run_config(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, UnknownKeyNamesItsPath) {
  try {
    parse_run_config(json{{"train", {{"learning_rat", 0.1}}}});
    FAIL();
  } catch (const ConfigError& e) {
    ASSERT_EQ(e.problems().size(), 1u);
    EXPECT_EQ(e.problems()[0], "/train/learning_rat: unknown key");
  }
  EXPECT_THROW(parse_run_config(json{{"extra", 1}}), ConfigError);
}

TEST(Config, CollectsEveryProblem) {
  try {
    parse_run_config(json{{"train", {{"steps", "many"}, {"pin_loss", "l2"}}}, {"preset", "huge"}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.problems().size(), 3u);
  }
  EXPECT_THROW(parse_run_config(json{{"train", {{"warmup_steps", 5000}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"prior", {{"k_max", 12}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json::array()), ConfigError);
}

TEST(Config, LoadReportsParseErrors) {
  const fs::path dir = scratch("cfg");
  write_text(dir / "bad.json", "{\"train\": ");
  EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
}

TEST(DatasetIo, FormatDoubleRoundTrips) {
  for (double v : {0.1, -1e-300, 3.0, 1.0 / 3.0, 12345.678e10}) EXPECT_EQ(*parse_double(format_double(v)), v);
  EXPECT_FALSE(parse_double("abc"));
  EXPECT_FALSE(parse_double("1.5x"));
}

TEST(DatasetIo, CsvSplitHandlesQuotes) {
  const auto f = split_csv_line(R"(a,"b,c","d ""e""")");
  ASSERT_EQ(f.size(), 3u);
  EXPECT_EQ(f[1], "b,c");
  EXPECT_EQ(f[2], "d \"e\"");
}

TEST(DatasetIo, GeneratedDatasetRoundTrips) {
  const fs::path dir = scratch("ds");
  PriorRanges r = PriorRanges::desk();
  r.gmm_fraction = 0.0;
  r.d_min = 5;
  const Dataset ds = generate_task(9, 0, r, true);
  write_dataset(dir, "task_0", ds);
  const Dataset back = read_dataset(dir, "task_0");
  EXPECT_EQ(back.x, ds.x);
  EXPECT_EQ(back.col_kind, ds.col_kind);
  EXPECT_EQ(*back.labels, *ds.labels);
  EXPECT_EQ(back.k_true, ds.k_true);
  EXPECT_EQ(back.provenance.config.seed, ds.provenance.config.seed);
  EXPECT_EQ(list_datasets(dir), std::vector<std::string>{"task_0"});
}

TEST(DatasetIo, PlainCsvWithoutSidecar) {
  const fs::path dir = scratch("plain");
  write_text(dir / "a.csv", "x,color,label\n1.5,red,0\n2.5,blue,1\n-1,red,1\n");
  const Table t = read_table(dir / "a.csv");
  EXPECT_FALSE(t.used_sidecar);
  ASSERT_EQ(t.ds.d(), 2);
  EXPECT_EQ(t.ds.col_kind[1], ColumnKind::kCategorical);
  EXPECT_EQ(t.ds.x(1, 1), 1.0);
  EXPECT_EQ(t.categories[1], (std::vector<std::string>{"red", "blue"}));
  EXPECT_EQ(t.ds.k_true, 2);
}

TEST(DatasetIo, Errors) {
  const fs::path dir = scratch("err");
  write_text(dir / "ragged.csv", "a,b\n1,2\n3\n");
  write_text(dir / "neg.csv", "a,label\n1,-1\n");
  write_text(dir / "empty.csv", "");
  write_text(dir / "header.csv", "a,b\n");
  for (const char* n : {"ragged", "neg", "empty", "header"}) EXPECT_THROW(read_dataset(dir, n), IoError) << n;
  EXPECT_THROW(list_datasets(dir / "nope"), IoError);
  write_text(dir / "typed.csv", "a,b\n1,x\n");
  write_text(dir / "typed.meta.json", R"({"col_kind": ["numeric", "numeric"]})");
  EXPECT_THROW(read_dataset(dir, "typed"), IoError);
}
