#include "ciem/manifest.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ciem/error.hpp"

namespace ciem {

double UtteranceMeta::snr_target(double clean_ceiling_db) const {
  if (clean || !snr_db) return clean_ceiling_db;
  return *snr_db;
}

void UtteranceMeta::validate() const {
  if (id.empty()) throw DataError("utterance record without id");
  if (env < 0) throw DataError(id + ": negative environment label");
  if (clean && env != 0) throw DataError(id + ": clean utterance with env != 0");
  if (!clean && (!snr_db || !std::isfinite(*snr_db))) {
    throw DataError(id + ": noisy utterance needs a finite snr_db");
  }
}

std::string to_jsonl_line(const UtteranceMeta& m) {
  nlohmann::ordered_json j;
  j["id"] = m.id;
  j["speaker"] = m.speaker;
  j["env"] = m.env;
  if (m.snr_db && !m.clean) {
    j["snr_db"] = *m.snr_db;
  } else {
    j["snr_db"] = nullptr;
  }
  j["clean"] = m.clean;
  j["path"] = m.path;
  if (!m.strata.empty()) j["strata"] = m.strata;
  return j.dump();
}

UtteranceMeta from_jsonl_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    UtteranceMeta m;
    m.id = j.at("id").get<std::string>();
    m.speaker = j.value("speaker", std::string{});
    m.env = j.value("env", 0);
    m.clean = j.value("clean", false);
    if (j.contains("snr_db") && !j["snr_db"].is_null()) m.snr_db = j["snr_db"].get<double>();
    m.path = j.value("path", std::string{});
    if (j.contains("strata")) m.strata = j["strata"].get<std::vector<std::string>>();
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad manifest record: ") + e.what());
  }
}

void write_manifest(std::ostream& os, const std::vector<UtteranceMeta>& metas) {
  for (const auto& m : metas) os << to_jsonl_line(m) << '\n';
}

std::vector<UtteranceMeta> read_manifest(std::istream& is) {
  std::vector<UtteranceMeta> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_jsonl_line(line));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_manifest(const std::filesystem::path& path, const std::vector<UtteranceMeta>& metas) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  write_manifest(os, metas);
}

std::vector<UtteranceMeta> load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  try {
    return read_manifest(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> strata_of(const UtteranceMeta& m) {
  if (!m.strata.empty()) return m.strata;
  if (m.clean) return {"clean"};
  return {"env" + std::to_string(m.env)};
}

}  // namespace ciem
