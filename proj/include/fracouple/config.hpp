#pragma once

// Configuration ingestion and CLI plumbing: structured-text config files
// (key = value with [section] headers), content digests, run manifests, the
// generated calibration-constants file, and the subcommand dispatcher.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fracouple/experiments.hpp"

namespace fracouple {

inline constexpr const char* kVersion = "0.1.0";

// FNV-1a 64-bit digest, lowercase hex.
std::string content_digest(const std::string& bytes);
std::string file_digest(const std::string& path);

// Flat key/value view of a config document: `key = value` lines, `#`
// comments, `[section]` headers prefixing keys as `section.key`.  Lookups by
// bare key fall back across sections.
struct ConfigDoc {
    std::map<std::string, std::string> kv;
    std::string digest;

    bool has(const std::string& key) const;
    std::string get(const std::string& key) const;  // throws on missing key
    std::string get_or(const std::string& key, const std::string& dflt) const;
};

ConfigDoc read_config_doc(const std::string& path);
ConfigDoc parse_config_text(const std::string& text);

// Builds and validates the full experiment config; error messages cite the
// violated constraint.  overrides are applied on top of the file's keys
// (flag semantics: flags only override config keys).
ExperimentConfig parse_config(const std::string& path,
                              const std::vector<std::string>& overrides = {});
ExperimentConfig config_from_doc(ConfigDoc doc);

struct RunManifest {
    std::string config_digest;
    std::string constants_digest;  // empty when no constants file was used
    std::string version = kVersion;
    std::uint64_t master_seed = 0;
    std::string started, finished;  // wall-clock timestamps (metadata only)
    std::vector<std::string> outputs;
};

void write_manifest(const RunManifest& m, const std::string& path);

// Generated calibration constants, referenced back to the config that
// produced them by digest so scientific runs cannot silently recalibrate.
struct CalibrationConstants {
    double alpha_H = 0.0;
    double inversion_C = 0.0;
    double C_K = 0.0;
    double c2 = 0.0;
    std::string source_config_digest;
};

void write_constants(const CalibrationConstants& c, const std::string& path);
CalibrationConstants read_constants(const std::string& path);

// Subcommand dispatcher used by the binary and the tests:
//   fbm | integrate | couple | tail | validate | calibrate, each followed by
//   a config path and optional --key=value overrides.
// Returns 0 on success, 2 on validation failure, 1 on error; all errors go
// to stderr with the prefix `fracouple:error:`.
int cli_run(const std::vector<std::string>& args);

} // namespace fracouple
