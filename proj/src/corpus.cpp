#include "melsyn/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "melsyn/parallel.hpp"

namespace melsyn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<const char*, 15> kGenreWords{"hiphop", "pop",       "latin",  "electronic", "rnb",
                                                  "lounge", "world",     "jazz",   "rock",       "classical",
                                                  "blues",  "metal",     "country", "folk",      "newage"};

std::array<double, 3> hue_rgb(double h) {
  const double x = 6.0 * (h - std::floor(h));
  const int sector = static_cast<int>(x) % 6;
  const double f = x - std::floor(x);
  switch (sector) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
  }
}

std::string item_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "item%05d", i);
  return buf;
}

fs::path absolute_normal(const fs::path& p) { return fs::absolute(p).lexically_normal(); }

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw Error("unknown split '" + name + "'");
}

void CorpusConfig::validate() const {
  if (n_items < 1) throw ConfigError("corpus.n_items", "corpus needs at least one item");
  if (genres < 1) throw ConfigError("corpus.genres", "genre count must be positive");
  double total = 0.0;
  for (double f : split_fracs) {
    if (f < 0.0) throw ConfigError("corpus.split_fracs", "split fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("corpus.split_fracs", "split fractions must sum to 1");
  if (image_height < 4 || image_width < 1) throw ConfigError("corpus.image_height", "image too small");
  if (noise < 0.0) throw ConfigError("corpus.noise", "noise level must be nonnegative");
  stft.validate();
}

std::string genre_word(int genre) {
  if (genre >= 1 && genre <= static_cast<int>(kGenreWords.size())) return kGenreWords[static_cast<std::size_t>(genre - 1)];
  return "style" + std::to_string(genre);
}

std::string tempo_word(double tempo) {
  if (tempo < 8.0) return "slow";
  if (tempo < 12.0) return "moderate";
  return "fast";
}

std::string make_caption(const LatentFactors& f) {
  return "a " + genre_word(f.genre) + " piece at " + tempo_word(f.tempo) + " tempo";
}

void check_factors(const LatentFactors& f, int genres) {
  if (f.genre < 1 || f.genre > genres) throw Error("genre " + std::to_string(f.genre) + " outside 1.." + std::to_string(genres));
  if (!(f.tempo >= 4.0 && f.tempo <= 16.0)) throw Error("tempo " + std::to_string(f.tempo) + " outside [4, 16]");
  if (!(f.brightness >= 0.0 && f.brightness <= 1.0)) throw Error("brightness outside [0, 1]");
}

TripletAssets generate_triplet(const LatentFactors& f, const CorpusConfig& config, Rng& rng) {
  check_factors(f, config.genres);
  const Index h = config.image_height, w = config.image_width;
  TripletAssets out{Tensor<float>({h, w, 3}), make_caption(f), {}, {}};

  const auto stripe = hue_rgb(static_cast<double>(f.genre - 1) / config.genres);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) {
        double v = 0.5;
        if (y >= h / 4 && y < h / 2) v = stripe[static_cast<std::size_t>(c)];
        if (y >= h / 2) v = f.brightness;
        v += rng.uniform(-0.03, 0.03);
        out.image[(y * w + x) * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  const auto& g = config.stft;
  const Index n = g.samples();
  const double bins = static_cast<double>(g.bins());
  const double k0 = f.genre * std::max(1.0, (bins - 1.0) / (2.0 * config.genres));
  std::vector<double> amps;
  for (int harmonic = 1; harmonic * k0 < bins - 1.0; ++harmonic) {
    amps.push_back(std::pow(static_cast<double>(harmonic), -2.0 + 2.5 * f.brightness));
  }
  double energy = 0.0;
  for (double a : amps) energy += a * a;
  for (double& a : amps) a /= std::sqrt(energy);

  out.waveform = Eigen::VectorXd::Zero(n);
  const double two_pi = 2.0 * std::numbers::pi;
  for (Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / g.sample_rate;
    double tone = 0.0;
    for (std::size_t hidx = 0; hidx < amps.size(); ++hidx) {
      const double freq = static_cast<double>(hidx + 1) * k0 * g.sample_rate / static_cast<double>(g.window);
      tone += amps[hidx] * std::sin(two_pi * freq * t);
    }
    const double env = 0.15 + 0.85 * (0.5 + 0.5 * std::cos(two_pi * f.tempo * t));
    out.waveform[i] = env * tone + config.noise * rng.normal();
  }
  out.spectrogram = stft_spectrogram(out.waveform, g);
  return out;
}

std::vector<TripletRecord> build_corpus(const CorpusConfig& config, const fs::path& out_dir) {
  config.validate();
  const fs::path root = absolute_normal(out_dir);
  for (const char* sub : {"images", "spectrograms", "audio"}) fs::create_directories(root / sub);

  const int n = config.n_items;
  Rng rng(config.seed);
  std::vector<int> genres(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) genres[static_cast<std::size_t>(i)] = i % config.genres + 1;
  auto shuffle = [&](auto& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  };
  shuffle(genres);

  const int n_train = static_cast<int>(std::lround(config.split_fracs[0] * n));
  const int n_val = std::min(n - n_train, static_cast<int>(std::lround(config.split_fracs[1] * n)));
  std::vector<Split> splits(static_cast<std::size_t>(n), Split::test);
  for (int i = 0; i < n_train; ++i) splits[static_cast<std::size_t>(i)] = Split::train;
  for (int i = n_train; i < n_train + n_val; ++i) splits[static_cast<std::size_t>(i)] = Split::val;
  shuffle(splits);

  std::vector<TripletRecord> records(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& r = records[static_cast<std::size_t>(i)];
    LatentFactors f;
    f.genre = genres[static_cast<std::size_t>(i)];
    f.tempo = rng.uniform(4.0, 16.0);
    f.brightness = rng.uniform();
    r.id = item_id(i);
    r.genre = f.genre;
    r.caption = make_caption(f);
    r.split = splits[static_cast<std::size_t>(i)];
    r.factors = f;
    r.image_path = root / "images" / (r.id + ".melt");
    r.spectrogram_path = root / "spectrograms" / (r.id + ".melt");
    r.waveform_path = root / "audio" / (r.id + ".wav");
  }

  parallel_for(records.size(), [&](std::size_t i) {
    const auto& r = records[i];
    Rng item_rng = Rng(config.seed).split(1000 + i);
    const TripletAssets a = generate_triplet(*r.factors, config, item_rng);
    save_melt(r.image_path, a.image);
    const Eigen::MatrixXf spec = a.spectrogram.values.cast<float>();
    const RowMajorMatrixX<float> rows = spec;
    save_melt(r.spectrogram_path, Tensor<float>({spec.rows(), spec.cols()}, Eigen::Map<const Eigen::VectorXf>(rows.data(), rows.size())));
    write_wav(r.waveform_path, a.waveform, config.stft.sample_rate);
  });
  write_manifest(root / "manifest.jsonl", records);
  return records;
}

void write_manifest(const fs::path& path, const std::vector<TripletRecord>& records) {
  const fs::path base = absolute_normal(path).parent_path();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) {
    json row;
    row["id"] = r.id;
    row["genre"] = r.genre;
    row["caption"] = r.caption;
    row["image_path"] = r.image_path.lexically_relative(base).generic_string();
    row["spectrogram_path"] = r.spectrogram_path.lexically_relative(base).generic_string();
    if (!r.waveform_path.empty()) row["waveform_path"] = r.waveform_path.lexically_relative(base).generic_string();
    row["split"] = to_string(r.split);
    if (r.factors) {
      row["factors"] = {{"genre", r.factors->genre}, {"tempo", r.factors->tempo}, {"brightness", r.factors->brightness}};
    }
    out << row.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<TripletRecord> load_manifest(const fs::path& path, int genres) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  const fs::path base = absolute_normal(path).parent_path();
  std::vector<TripletRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    TripletRecord r;
    try {
      const json row = json::parse(line);
      r.id = row.at("id").get<std::string>();
      r.genre = row.at("genre").get<int>();
      r.caption = row.at("caption").get<std::string>();
      r.image_path = (base / row.at("image_path").get<std::string>()).lexically_normal();
      r.spectrogram_path = (base / row.at("spectrogram_path").get<std::string>()).lexically_normal();
      if (row.contains("waveform_path")) r.waveform_path = (base / row["waveform_path"].get<std::string>()).lexically_normal();
      r.split = parse_split(row.at("split").get<std::string>());
      if (row.contains("factors")) {
        const auto& f = row["factors"];
        r.factors = LatentFactors{f.at("genre").get<int>(), f.at("tempo").get<double>(), f.at("brightness").get<double>()};
      }
    } catch (const json::exception& e) {
      throw IoError(where + ": malformed row: " + e.what());
    } catch (const Error& e) {
      throw IoError(where + ": " + e.what());
    }
    const std::string row_name = where + " (id " + r.id + ")";
    if (r.genre < 1 || r.genre > genres) throw IoError(row_name + ": genre out of range");
    if (r.factors) {
      try {
        check_factors(*r.factors, genres);
      } catch (const Error& e) {
        throw IoError(row_name + ": " + e.what());
      }
    }
    if (!fs::exists(r.image_path)) throw IoError(row_name + ": missing image " + r.image_path.string());
    if (!fs::exists(r.spectrogram_path)) throw IoError(row_name + ": missing spectrogram " + r.spectrogram_path.string());
    if (!r.waveform_path.empty() && !fs::exists(r.waveform_path)) {
      throw IoError(row_name + ": missing waveform " + r.waveform_path.string());
    }
    out.push_back(std::move(r));
  }
  return out;
}

Tensor<float> load_image(const TripletRecord& record) {
  Tensor<float> img = load_melt<float>(record.image_path);
  if (img.rank() != 3 || img.dim(2) != 3) throw IoError(record.image_path.string() + ": image must be H x W x 3");
  return img;
}

Spectrogram load_spectrogram(const TripletRecord& record, const StftConfig& geometry) {
  const Tensor<double> t = load_melt<double>(record.spectrogram_path);
  if (t.rank() != 2 || t.dim(0) != geometry.frames || t.dim(1) != geometry.bins()) {
    throw IoError(record.spectrogram_path.string() + ": spectrogram " + shape_string(t.dims()) + " does not match " +
                  std::to_string(geometry.frames) + "x" + std::to_string(geometry.bins()));
  }
  return Spectrogram{t.row_major(t.dim(0), t.dim(1)), geometry};
}

std::vector<TripletRecord> filter_split(const std::vector<TripletRecord>& records, Split split) {
  std::vector<TripletRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

}  // namespace melsyn
