//! The category/label taxonomy: seven toxic categories plus Safe, and the
//! twenty fine-grained labels that fold into them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One of the seven toxic categories, or Safe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "Sarcasm")]
    Sarcasm,
    #[serde(rename = "Horror")]
    Horror,
    #[serde(rename = "Sexual")]
    Sexual,
    #[serde(rename = "Mental & Risk")]
    MentalRisk,
    #[serde(rename = "Ideology")]
    Ideology,
    #[serde(rename = "Violence & Harm")]
    ViolenceHarm,
    #[serde(rename = "Discrimination")]
    Discrimination,
    #[serde(rename = "Safe")]
    Safe,
}

impl Category {
    /// All categories in canonical order (C1..C7, then Safe).
    pub const ALL: [Category; 8] = [
        Category::Sarcasm,
        Category::Horror,
        Category::Sexual,
        Category::MentalRisk,
        Category::Ideology,
        Category::ViolenceHarm,
        Category::Discrimination,
        Category::Safe,
    ];

    /// The toxic categories only, canonical order.
    pub const TOXIC: [Category; 7] = [
        Category::Sarcasm,
        Category::Horror,
        Category::Sexual,
        Category::MentalRisk,
        Category::Ideology,
        Category::ViolenceHarm,
        Category::Discrimination,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Sarcasm => "Sarcasm",
            Category::Horror => "Horror",
            Category::Sexual => "Sexual",
            Category::MentalRisk => "Mental & Risk",
            Category::Ideology => "Ideology",
            Category::ViolenceHarm => "Violence & Harm",
            Category::Discrimination => "Discrimination",
            Category::Safe => "Safe",
        }
    }

    pub fn from_name(name: &str) -> Option<Category> {
        Category::ALL.iter().copied().find(|c| c.name() == name)
    }

    /// Index into the canonical ordering, used for one-hot targets and
    /// confusion matrices.
    pub fn index(self) -> usize {
        Category::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn is_toxic(self) -> bool {
        self != Category::Safe
    }
}

/// The fine-grained labels grouped by category. 20 toxic labels total.
const FINE_LABELS: [(&str, Category); 20] = [
    ("Sarcasm", Category::Sarcasm),
    ("Horror", Category::Horror),
    ("Sexual Content", Category::Sexual),
    ("Self-harm & Suicide", Category::MentalRisk),
    ("Hate & Extremist Mentality", Category::MentalRisk),
    ("Drugs", Category::MentalRisk),
    ("Historical Sensitivity", Category::Ideology),
    ("Social Sensitivity", Category::Ideology),
    ("Political Sensitivity", Category::Ideology),
    ("Religious Sensitivity", Category::Ideology),
    ("Violence", Category::ViolenceHarm),
    ("Illegal Acts", Category::ViolenceHarm),
    ("Personal Abuse", Category::ViolenceHarm),
    ("Threats", Category::ViolenceHarm),
    ("Death", Category::ViolenceHarm),
    ("Child Safety", Category::ViolenceHarm),
    ("Vulgar Language", Category::ViolenceHarm),
    ("Gender Discrimination", Category::Discrimination),
    ("Racial Discrimination", Category::Discrimination),
    ("Other Discrimination", Category::Discrimination),
];

/// The full taxonomy: 8 categories and the total map from fine labels to
/// categories ("Safe" maps to Safe).
#[derive(Debug, Clone)]
pub struct CategoryTaxonomy {
    label_to_category: BTreeMap<&'static str, Category>,
}

impl Default for CategoryTaxonomy {
    fn default() -> Self {
        let mut label_to_category = BTreeMap::new();
        for (label, cat) in FINE_LABELS {
            label_to_category.insert(label, cat);
        }
        label_to_category.insert("Safe", Category::Safe);
        CategoryTaxonomy { label_to_category }
    }
}

impl CategoryTaxonomy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn categories(&self) -> &'static [Category; 8] {
        &Category::ALL
    }

    /// Category a fine label belongs to, if the label is known.
    pub fn category_of(&self, label: &str) -> Option<Category> {
        self.label_to_category.get(label).copied()
    }

    /// All fine labels (excluding "Safe") in table order.
    pub fn fine_labels(&self) -> impl Iterator<Item = (&'static str, Category)> {
        FINE_LABELS.iter().copied()
    }

    pub fn fine_label_count(&self) -> usize {
        FINE_LABELS.len()
    }
}
