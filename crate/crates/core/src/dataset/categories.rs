use serde::{Deserialize, Serialize};

use super::Subset;

const CATEGORIES_JSON: &str = include_str!("../../fixtures/categories.json");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub name: String,
    pub keywords: Vec<String>,
}

/// Sound categories assigned to each subset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryFixture {
    pub synthetic: Vec<CategoryEntry>,
    pub real: Vec<CategoryEntry>,
}

impl CategoryFixture {
    pub fn for_subset(&self, subset: Subset) -> &[CategoryEntry] {
        match subset {
            Subset::Synthetic => &self.synthetic,
            Subset::Real => &self.real,
        }
    }
}

pub fn category_fixture() -> CategoryFixture {
    serde_json::from_str(CATEGORIES_JSON).expect("bundled category fixture is valid JSON")
}
