#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpl/mdd.hpp"

namespace mpl {
namespace report {

struct MddReport {
  mdd::MddCounts counts;
  mdd::MddScores scores;
  double per_percent = 0.0;
  std::map<std::string, double> speaker_per;  // percent
};

// Human-readable summary table.
std::string format_mdd_text(const MddReport& rep);

// Machine-readable key,value rows: raw counts, derived percentages, PER.
std::string format_mdd_csv(const MddReport& rep);

// speaker,per_percent rows, speakers sorted.
std::string format_speaker_per_csv(const std::map<std::string, double>& speaker_per);
std::map<std::string, double> load_speaker_per_csv(const std::filesystem::path& path);

// Human ratings per speaker.
struct SpeakerRatings {
  double intelligibility = 0.0;  // 0..100, 0 = not intelligible
  double accentedness = 0.0;     // 1..9, 1 = heavy accent
};

std::map<std::string, SpeakerRatings> load_scores_csv(const std::filesystem::path& path);

struct CorrelationRow {
  std::string speaker;
  double per_percent = 0.0;
  double intelligibility = 0.0;
  double accentedness = 0.0;
};

struct CorrelationReport {
  std::vector<CorrelationRow> rows;  // the 2k extreme speakers, sorted by id
  std::optional<double> r_intelligibility;
  std::optional<double> r_accentedness;
  double p_intelligibility = 1.0;
  double p_accentedness = 1.0;
};

// Joins the k highest- and k lowest-PER speakers with their ratings and
// correlates PER against both rating scales.
CorrelationReport correlate(const std::map<std::string, double>& speaker_per,
                            const std::map<std::string, SpeakerRatings>& ratings, int k);

std::string format_correlation_csv(const CorrelationReport& rep);
std::string format_correlation_text(const CorrelationReport& rep);

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace report
}  // namespace mpl
