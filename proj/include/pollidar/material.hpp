#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "pollidar/errors.hpp"

namespace pollidar {

/// Surface material of the temporal-polarimetric reflectance model.
struct Material {
  double eta = 1.5;             ///< refractive index, > 1
  double roughness = 0.3;       ///< microfacet roughness, (0, 1]
  double spec_depol = 1.0;      ///< |D^s|: residual polarization of the specular lobe, [0, 1]
  double diff_depol = 0.0;      ///< |D^d|: polarized leakage of the diffuse lobe, [0, 1]
  double diff_tau = 2.0;        ///< diffuse temporal constant, ns, > 0
  double diffuse_albedo = 0.5;  ///< [0, 1]
  double specular_albedo = 0.5; ///< [0, 1]
  int material_id = 0;
  std::string name;

  void validate() const {
    if (!(eta > 1.0)) throw ConfigError(where() + "eta must be > 1");
    if (!(roughness > 0.0 && roughness <= 1.0))
      throw ConfigError(where() + "roughness must be in (0, 1]");
    if (!(spec_depol >= 0.0 && spec_depol <= 1.0))
      throw ConfigError(where() + "spec_depol must be in [0, 1]");
    if (!(diff_depol >= 0.0 && diff_depol <= 1.0))
      throw ConfigError(where() + "diff_depol must be in [0, 1]");
    if (!(diff_tau > 0.0)) throw ConfigError(where() + "diff_tau must be > 0");
    if (!(diffuse_albedo >= 0.0 && diffuse_albedo <= 1.0))
      throw ConfigError(where() + "diffuse_albedo must be in [0, 1]");
    if (!(specular_albedo >= 0.0 && specular_albedo <= 1.0))
      throw ConfigError(where() + "specular_albedo must be in [0, 1]");
  }

 private:
  std::string where() const {
    return "material " + std::to_string(material_id) +
           (name.empty() ? std::string() : " (" + name + ")") + ": ";
  }
};

/// Keyed material table. The JSON form maps material_id to Material fields.
class MaterialDB {
 public:
  void add(const Material& m) {
    m.validate();
    if (materials_.count(m.material_id))
      throw ConfigError("duplicate material_id " +
                        std::to_string(m.material_id));
    materials_[m.material_id] = m;
  }

  bool contains(int id) const { return materials_.count(id) != 0; }

  const Material& get(int id) const {
    auto it = materials_.find(id);
    if (it == materials_.end())
      throw ConfigError("unknown material_id " + std::to_string(id));
    return it->second;
  }

  const std::map<int, Material>& all() const { return materials_; }
  std::size_t size() const { return materials_.size(); }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [id, m] : materials_) {
      j[std::to_string(id)] = {
          {"name", m.name},
          {"eta", m.eta},
          {"roughness", m.roughness},
          {"spec_depol", m.spec_depol},
          {"diff_depol", m.diff_depol},
          {"diff_tau_ns", m.diff_tau},
          {"diffuse_albedo", m.diffuse_albedo},
          {"specular_albedo", m.specular_albedo},
      };
    }
    return j;
  }

  static MaterialDB from_json(const nlohmann::json& j) {
    MaterialDB db;
    for (auto it = j.begin(); it != j.end(); ++it) {
      Material m;
      try {
        m.material_id = std::stoi(it.key());
      } catch (const std::exception&) {
        throw ConfigError("materials: key '" + it.key() +
                          "' is not an integer material_id");
      }
      const auto& v = it.value();
      m.name = v.value("name", std::string());
      m.eta = v.value("eta", m.eta);
      m.roughness = v.value("roughness", m.roughness);
      m.spec_depol = v.value("spec_depol", m.spec_depol);
      m.diff_depol = v.value("diff_depol", m.diff_depol);
      m.diff_tau = v.value("diff_tau_ns", m.diff_tau);
      m.diffuse_albedo = v.value("diffuse_albedo", m.diffuse_albedo);
      m.specular_albedo = v.value("specular_albedo", m.specular_albedo);
      db.add(m);
    }
    return db;
  }

 private:
  std::map<int, Material> materials_;
};

/// Built-in table of common outdoor surfaces. Refractive indices follow
/// typical published values for these surfaces near 1 um.
inline MaterialDB default_material_db() {
  MaterialDB db;
  db.add({1.635, 0.45, 0.35, 0.06, 2.5, 0.30, 0.25, 1, "asphalt"});
  db.add({1.490, 0.15, 0.80, 0.04, 0.8, 0.55, 0.60, 2, "painted_metal"});
  db.add({1.507, 0.05, 0.95, 0.02, 0.4, 0.08, 0.90, 3, "glass"});
  db.add({1.400, 0.60, 0.25, 0.10, 4.0, 0.45, 0.12, 4, "foliage"});
  db.add({1.570, 0.50, 0.30, 0.08, 3.0, 0.40, 0.20, 5, "concrete"});
  return db;
}

}  // namespace pollidar
