#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "madcnn/error.hpp"
#include "madcnn/random.hpp"
#include "madcnn/sim.hpp"

namespace madcnn::sim {

namespace {

struct Layout {
  Split split;
  bool has_collisions;
  int level;
  double minutes;
};

// Training: 4 min collisions at the highest level. Testing: 10 min with and
// 15 min without collisions at levels 4, 3, 2.
constexpr std::array<Layout, 7> kLayout{{
    {Split::Train, true, 4, 4.0},
    {Split::Test, true, 4, 10.0},
    {Split::Test, true, 3, 10.0},
    {Split::Test, true, 2, 10.0},
    {Split::Test, false, 4, 15.0},
    {Split::Test, false, 3, 15.0},
    {Split::Test, false, 2, 15.0},
}};

std::string entry_name(const Layout& l) {
  return split_name(l.split) + (l.has_collisions ? "_collision_L" : "_free_L") +
         std::to_string(l.level);
}

std::string format_real(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string split_name(Split split) { return split == Split::Train ? "train" : "test"; }

const CorpusEntry* Corpus::find(Split split, bool has_collisions, int level) const {
  for (const auto& e : entries) {
    if (e.split == split && e.has_collisions == has_collisions && e.stiffness_level == level) {
      return &e;
    }
  }
  return nullptr;
}

const CorpusEntry& Corpus::require(Split split, bool has_collisions, int level) const {
  const CorpusEntry* e = find(split, has_collisions, level);
  if (e == nullptr) {
    throw InputError("corpus is missing the " + split_name(split) +
                     (has_collisions ? " collision" : " collision-free") + " split at level " +
                     std::to_string(level));
  }
  return *e;
}

Corpus generate_corpus(const SimConfig& config, std::uint64_t seed, double scale) {
  config.validate();
  if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("corpus scale must lie in (0, 1]");
  Corpus corpus;
  for (std::size_t i = 0; i < kLayout.size(); ++i) {
    const Layout& l = kLayout[i];
    CorpusEntry e;
    e.name = entry_name(l);
    e.split = l.split;
    e.has_collisions = l.has_collisions;
    e.stiffness_level = l.level;
    e.duration_s = l.minutes * 60.0 * scale;
    e.seed = derive_seed(seed, i);

    const Trajectory traj = generate_trajectory(e.duration_s, config, derive_seed(e.seed, 0));
    std::vector<CollisionEvent> events;
    if (l.has_collisions) events = schedule_collisions(e.duration_s, config, derive_seed(e.seed, 1));
    e.trace = simulate_trace(config, l.level, events, traj, derive_seed(e.seed, 2));
    corpus.entries.push_back(std::move(e));
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / kCorpusManifest, std::ios::binary);
  if (!manifest) throw IoError("cannot write corpus manifest in " + dir.string());
  manifest << "path,split,kind,stiffness,duration_s,seed\n";
  for (const auto& e : corpus.entries) {
    const std::string file = e.name + ".csv";
    data::write_trace(e.trace, dir / file);
    manifest << file << ',' << split_name(e.split) << ','
             << (e.has_collisions ? "collision" : "free") << ',' << e.stiffness_level << ','
             << format_real(e.duration_s) << ',' << e.seed << '\n';
  }
  if (!manifest) throw IoError("failed writing corpus manifest");
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / kCorpusManifest, std::ios::binary);
  if (!in) throw IoError("no corpus manifest in " + dir.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != "path,split,kind,stiffness,duration_s,seed") {
    throw ParseError("bad corpus manifest header", line_no);
  }
  Corpus corpus;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
    if (f.size() != 6) throw ParseError("corpus manifest row needs 6 fields", line_no);
    CorpusEntry e;
    e.name = std::filesystem::path(f[0]).stem().string();
    if (f[1] != "train" && f[1] != "test") throw ParseError("unknown split '" + f[1] + "'", line_no);
    e.split = f[1] == "train" ? Split::Train : Split::Test;
    if (f[2] != "collision" && f[2] != "free") {
      throw ParseError("unknown kind '" + f[2] + "'", line_no);
    }
    e.has_collisions = f[2] == "collision";
    try {
      e.stiffness_level = std::stoi(f[3]);
      e.duration_s = std::stod(f[4]);
      e.seed = std::stoull(f[5]);
    } catch (const std::exception&) {
      throw ParseError("malformed numeric field in corpus manifest", line_no);
    }
    e.trace = data::read_trace(dir / f[0]);
    if (e.trace.stiffness_level != e.stiffness_level) {
      throw FormatError(f[0] + ": stiffness disagrees with the corpus manifest");
    }
    corpus.entries.push_back(std::move(e));
  }
  return corpus;
}

}  // namespace madcnn::sim
