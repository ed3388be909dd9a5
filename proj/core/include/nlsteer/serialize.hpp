#pragma once

#include "nlsteer/eval.hpp"
#include "nlsteer/featmap.hpp"
#include "nlsteer/intervene.hpp"
#include "nlsteer/sites.hpp"
#include "nlsteer/subject.hpp"
#include "nlsteer/train.hpp"

#include <memory>
#include <string>

namespace nlsteer {

// Versioned JSON container: {"format":"nlsteer","version":1,"kind":...,
// "payload":{...}}. Doubles round-trip bit-exactly (shortest-representation
// printing).

std::string to_container(const FeatureMap& map);
std::unique_ptr<FeatureMap> featmap_from_container(const std::string& text);

std::string to_container(const SteeringDirection& dir);
SteeringDirection steering_from_container(const std::string& text);

std::string to_container(const Subject& subject);
Subject subject_from_container(const std::string& text);

std::string to_container(const LossSiteSet& sites);
LossSiteSet sites_from_container(const std::string& text);

std::string dataset_to_jsonl(const ContrastiveDataset& data, int input_dim);
ContrastiveDataset dataset_from_jsonl(const std::string& text, int seq_len, int input_dim);

std::string train_report_to_json(const TrainReport& report, const TrainConfig& cfg);
std::string loss_curve_to_csv(const TrainReport& report);

void write_file(const std::string& path, const std::string& text);
std::string read_file(const std::string& path);

}  // namespace nlsteer
