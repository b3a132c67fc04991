#include <catch2/catch.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "onestep/data.hpp"

using namespace onestep;

namespace {

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& name, const std::string& contents) {
    path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() { std::error_code ec; std::filesystem::remove(path, ec); }
  std::string str() const { return path.string(); }
};

ColumnSchema zy_schema() {
  ColumnSchema schema;
  schema.treatment = "Z";
  schema.outcome = "Y";
  return schema;
}

}  // namespace

TEST_CASE("load_dataset binds roles and preserves rows") {
  TempFile file("onestep_t1.csv", "Z,Y,x1\n1,2,0.5\n0,1,1.5\n1,4,2.5\n");
  const StudyDataset ds = load_dataset(file.str(), zy_schema());
  REQUIRE(ds.n() == 3);
  REQUIRE(ds.d() == 1);
  CHECK(ds.treatment(0) == 1.0);
  CHECK(ds.treatment(1) == 0.0);
  CHECK(ds.outcome(2) == 4.0);
  CHECK(ds.covariates(1, 0) == 1.5);
  CHECK(ds.ids[0] == "1");
  CHECK_FALSE(ds.selection.has_value());
}

TEST_CASE("a file lacking the declared treatment column is a schema error") {
  TempFile file("onestep_t2.csv", "T,Y,x1\n1,2,0.5\n0,1,1.5\n");
  CHECK_THROWS_AS(load_dataset(file.str(), zy_schema()), SchemaError);
}

TEST_CASE("treatment values outside 0/1 name the offending column") {
  TempFile file("onestep_t3.csv", "Z,Y,x1\n2,2,0.5\n0,1,1.5\n");
  CHECK_THROWS_WITH(load_dataset(file.str(), zy_schema()),
                    Catch::Contains("Z") && Catch::Contains("0/1"));
}

TEST_CASE("selection column populates and non-selected rows may omit Z and Y") {
  TempFile file("onestep_t4.csv",
                "D,Z,Y,x1\n1,1,2,0.5\n1,0,1,1.5\n0,,,2.5\n1,1,3,0.25\n0,,,4\n");
  ColumnSchema schema = zy_schema();
  schema.selection = "D";
  const StudyDataset ds = load_dataset(file.str(), schema);
  REQUIRE(ds.selection.has_value());
  CHECK(ds.selected_rows().size() == 3);
  CHECK(std::isnan(ds.treatment(2)));
  CHECK(std::isnan(ds.outcome(4)));
  CHECK(ds.group_rows(1).size() == 2);
  CHECK(ds.group_rows(0).size() == 1);
}

TEST_CASE("non-numeric covariate cells are recorded as missing") {
  TempFile file("onestep_t5.csv", "Z,Y,x1\n1,2,abc\n0,1,1.5\n");
  const StudyDataset ds = load_dataset(file.str(), zy_schema());
  CHECK(std::isnan(ds.covariates(0, 0)));
  CHECK(ds.has_missing());
}

TEST_CASE("an unreadable file raises an io error") {
  CHECK_THROWS_AS(load_dataset("/nonexistent/nowhere.csv", zy_schema()), IoError);
}

TEST_CASE("mean imputation appends an indicator per incomplete column") {
  TempFile file("onestep_t6.csv", "Z,Y,a\n1,2,1\n0,1,\n1,4,3\n");
  const StudyDataset ds = load_dataset(file.str(), zy_schema());
  const StudyDataset imp = impute_missing(ds);
  REQUIRE(imp.d() == 2);
  CHECK(imp.covariate_names[1] == "a_missing");
  CHECK(imp.covariates(0, 0) == 1.0);
  CHECK(imp.covariates(1, 0) == 2.0);  // mean of {1, 3}
  CHECK(imp.covariates(2, 0) == 3.0);
  CHECK(imp.covariates(0, 1) == 0.0);
  CHECK(imp.covariates(1, 1) == 1.0);
  CHECK(imp.covariates(2, 1) == 0.0);
}

TEST_CASE("a complete dataset passes through imputation unchanged") {
  TempFile file("onestep_t7.csv", "Z,Y,a,b\n1,2,1,0\n0,1,2,1\n");
  const StudyDataset ds = load_dataset(file.str(), zy_schema());
  const StudyDataset imp = impute_missing(ds);
  CHECK(imp.d() == 2);
  CHECK(imp.covariates == ds.covariates);
}

TEST_CASE("two incomplete continuous columns yield exactly two indicators") {
  TempFile file("onestep_t8.csv", "Z,Y,a,b\n1,2,,0\n0,1,2,\n1,3,4,6\n");
  const StudyDataset imp = impute_missing(load_dataset(file.str(), zy_schema()));
  REQUIRE(imp.d() == 4);
  CHECK(imp.covariate_names[2] == "a_missing");
  CHECK(imp.covariate_names[3] == "b_missing");
  CHECK(imp.covariates(0, 0) == 3.0);  // mean of {2, 4}
  CHECK(imp.covariates(1, 1) == 3.0);  // mean of {0, 6}
}

TEST_CASE("imputation is idempotent") {
  TempFile file("onestep_t9.csv", "Z,Y,a,b\n1,2,,0\n0,1,2,\n1,3,4,6\n");
  const StudyDataset once = impute_missing(load_dataset(file.str(), zy_schema()));
  const StudyDataset twice = impute_missing(once);
  CHECK(twice.d() == once.d());
  CHECK(twice.covariates == once.covariates);
}

TEST_CASE("an entirely missing continuous column has no mean to impute") {
  TempFile file("onestep_t10.csv", "Z,Y,a\n1,2,\n0,1,\n");
  CHECK_THROWS_AS(impute_missing(load_dataset(file.str(), zy_schema())),
                  std::invalid_argument);
}

TEST_CASE("categorical columns get a zero-filled missing category") {
  TempFile file("onestep_t11.csv", "Z,Y,level_a\n1,2,1\n0,1,\n");
  MissingnessPolicy policy;
  policy.categorical.insert("level_a");
  const StudyDataset imp = impute_missing(load_dataset(file.str(), zy_schema()), policy);
  CHECK(imp.covariates(1, 0) == 0.0);
  CHECK(imp.covariates(1, 1) == 1.0);
}

TEST_CASE("profile over a two-point column has mean and spread one half") {
  TempFile file("onestep_t12.csv", "Z,Y,a\n1,2,0\n0,1,1\n");
  const StudyDataset ds = load_dataset(file.str(), zy_schema());
  const TargetProfile profile = profile_from_sample(ds, BasisSpec::main_terms(1));
  CHECK(profile.means(0) == Approx(0.5));
  REQUIRE(profile.spreads.has_value());
  CHECK((*profile.spreads)(0) == Approx(0.5));  // population convention
}

TEST_CASE("full-sample profile equals the per-column means") {
  TempFile file("onestep_t13.csv", "Z,Y,a,b\n1,2,1,10\n0,1,2,20\n1,0,3,60\n");
  const StudyDataset ds = load_dataset(file.str(), zy_schema());
  const TargetProfile profile = profile_from_sample(ds, BasisSpec::main_terms(2));
  CHECK(profile.means(0) == Approx(2.0));
  CHECK(profile.means(1) == Approx(30.0));
}

TEST_CASE("treated-only subset yields the treated-effect style profile") {
  TempFile file("onestep_t14.csv", "Z,Y,a\n1,2,1\n0,1,2\n1,0,5\n");
  const StudyDataset ds = load_dataset(file.str(), zy_schema());
  const TargetProfile profile =
      profile_from_sample(ds, ds.group_rows(1), BasisSpec::main_terms(1));
  CHECK(profile.means(0) == Approx(3.0));  // mean of {1, 5}
}

TEST_CASE("a single-row subset has the row's values and zero spreads") {
  TempFile file("onestep_t15.csv", "Z,Y,a,b\n1,2,1.25,3\n0,1,2,4\n");
  const StudyDataset ds = load_dataset(file.str(), zy_schema());
  const TargetProfile profile = profile_from_sample(ds, {0}, BasisSpec::main_terms(2));
  CHECK(profile.means(0) == 1.25);
  CHECK((*profile.spreads)(0) == 0.0);
  CHECK((*profile.spreads)(1) == 0.0);
}

TEST_CASE("an empty subset cannot define a profile") {
  TempFile file("onestep_t16.csv", "Z,Y,a\n1,2,1\n0,1,2\n");
  const StudyDataset ds = load_dataset(file.str(), zy_schema());
  CHECK_THROWS_AS(profile_from_sample(ds, {}, BasisSpec::main_terms(1)),
                  std::invalid_argument);
}

TEST_CASE("load, save, reload reproduces values bit for bit") {
  TempFile file("onestep_t17.csv",
                "D,Z,Y,a\n1,1,2.125,0.1\n1,0,1.5,\n0,,,3.725\n1,1,0.25,1e-3\n");
  ColumnSchema schema = zy_schema();
  schema.selection = "D";
  const StudyDataset first = load_dataset(file.str(), schema);

  const auto resaved = std::filesystem::temp_directory_path() / "onestep_t17b.csv";
  save_dataset(first, resaved.string());
  ColumnSchema schema2 = schema;
  schema2.id = "id";
  const StudyDataset second = load_dataset(resaved.string(), schema2);
  std::filesystem::remove(resaved);

  REQUIRE(second.n() == first.n());
  for (std::ptrdiff_t i = 0; i < first.n(); ++i) {
    for (std::ptrdiff_t k = 0; k < first.d(); ++k) {
      const double a = first.covariates(i, k), b = second.covariates(i, k);
      if (std::isnan(a))
        CHECK(std::isnan(b));
      else
        CHECK(a == b);
    }
    if (!std::isnan(first.outcome(i))) CHECK(first.outcome(i) == second.outcome(i));
  }
}

TEST_CASE("profile files round-trip through save and load") {
  TargetProfile profile;
  profile.names = {"a", "b^2"};
  profile.means = Eigen::Vector2d(0.125, 42.0);
  profile.spreads = Eigen::Vector2d(1.5, 0.0);
  const auto path = std::filesystem::temp_directory_path() / "onestep_t18.csv";
  save_profile(profile, path.string());
  const TargetProfile loaded = load_profile(path.string());
  std::filesystem::remove(path);
  CHECK(loaded.names == profile.names);
  CHECK(loaded.means == profile.means);
  CHECK(*loaded.spreads == *profile.spreads);
}
