#pragma once

#include <cstddef>
#include <string>

#include "ltq/harness.hpp"

namespace ltq::mini {

// The bundled 30-document fixture: 18 single-row patient reports
// (reports.Examination: name, diagnosis, treatment) and 12 multi-row accident
// bulletins (ntsb.Incident: aircraft, severity, site), with full annotations,
// linked tables and a 15-query benchmark covering every operator kind.
AnnotatedDataset build();

// Oracle head weights sized for a dataset's concept vocabulary.
HeadWeights oracle_weights(const AnnotatedDataset& dataset);

// The 12 accident bulletins concatenated into `groups` long documents padded
// with neutral filler so each exceeds `min_tokens` tokens; annotations move
// with their text. Used to exercise the sliding window.
AnnotatedDataset build_long_ntsb(std::size_t groups = 2, std::size_t min_tokens = 1500);

// Synthetic single-row collection of `docs` game reports with a roster table
// whose `bucket` attribute selects 1, 5 and 10 rows (b1/b5/b10); used for the
// join-pruning property.
AnnotatedDataset build_pruning(std::size_t docs = 100);

// Writes the dataset as a CLI workspace: collections/, tables/, latents/,
// annotations/, bench/ and weights/oracle.json.
void save_workspace(const AnnotatedDataset& dataset, const std::string& dir);

}  // namespace ltq::mini
