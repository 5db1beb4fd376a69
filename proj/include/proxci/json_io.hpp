#pragma once

#include <nlohmann/json_fwd.hpp>

#include "proxci/dgp.hpp"
#include "proxci/fredholm.hpp"
#include "proxci/ident_cat.hpp"
#include "proxci/ident_gauss.hpp"
#include "proxci/nulltest.hpp"

// JSON (de)serialization for model specs, configs and results. Output
// objects carry explicit dimension metadata so files are self-describing.
namespace proxci {

nlohmann::json to_json(const LatentClassModel& model);
LatentClassModel latent_class_from_json(const nlohmann::json& j);

nlohmann::json to_json(const LinearGaussianSem& sem);
LinearGaussianSem sem_from_json(const nlohmann::json& j);

nlohmann::json to_json(const StudyConfig& config);
StudyConfig study_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const StudyReport& report);
nlohmann::json to_json(const EffectTable& table);
nlohmann::json to_json(const NullTestResult& result);
nlohmann::json to_json(const ProxyRegressionFit& fit);
nlohmann::json to_json(const GaussianDoLawResult& result);
nlohmann::json to_json(const PicardDiagnostics& diagnostics);
nlohmann::json to_json(const LambdaPath& path);

} // namespace proxci
