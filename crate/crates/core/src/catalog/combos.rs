use serde::Serialize;

use super::record::{Crop, Portion};
use super::taxonomy::{Taxon, Taxonomy, HEALTHY};

/// A `{pest, portion, crop}` triple observed in the collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Combination {
    pub pest: &'static str,
    pub portion: Portion,
    pub crop: Crop,
}

use Crop::{Cucumber as C, Eggplant as E, Strawberry as S, Tomato as T};

const LEAF: &[Portion] = &Portion::LEAF;
const FRUIT: &[Portion] = &[Portion::Fruit];
const FLOWER: &[Portion] = &[Portion::Flower];
const LEAF_BACK: &[Portion] = &[Portion::LeafBack];

// Expanded as the cartesian product of each row's portions and crops.
const TABLE: &[(&str, &[Portion], &[Crop])] = &[
    (HEALTHY, LEAF, &[T, S, C, E]),
    (HEALTHY, FRUIT, &[T, S, C, E]),
    (HEALTHY, FLOWER, &[S, C]),
    ("broad mite", FRUIT, &[S, E]),
    ("broad mite", LEAF, &[C, E]),
    ("Kanzawa spider mite", LEAF, &[C, E]),
    ("twospotted spider mite", LEAF, &[C, E, S]),
    ("tomato russet mite", LEAF, &[T]),
    ("greenhouse whitefly", LEAF, &[T, C]),
    ("tobacco whitefly", LEAF, &[T, C, E]),
    ("tobacco whitefly", FRUIT, &[T]),
    ("cotton aphid", LEAF, &[C, E, S]),
    ("cotton aphid", FLOWER, &[S]),
    ("green peach aphid", LEAF, &[E]),
    ("Solanum mealybug", FRUIT, &[E]),
    ("Solanum mealybug", LEAF_BACK, &[E]),
    ("Madeira mealybug", LEAF_BACK, &[E]),
    ("western flower thrips", FLOWER, &[S]),
    ("western flower thrips", FRUIT, &[S, T]),
    ("melon thrips", LEAF, &[C, E]),
    ("onion thrips", FRUIT, &[T]),
    ("Eurasian flower thrips", FLOWER, &[S]),
    ("hadda beetle", LEAF, &[E]),
    ("vegetable leafminer", LEAF, &[T]),
    ("serpentine leafminer", LEAF, &[E]),
    ("tomato leafminer", LEAF, &[T]),
    ("cotton bollworm", FRUIT, &[T, E]),
    ("tobacco cutworm", LEAF, &[S, E]),
];

/// All 78 known combinations, in table order.
pub fn known_combinations() -> Vec<Combination> {
    TABLE
        .iter()
        .flat_map(|(pest, portions, crops)| {
            portions.iter().flat_map(move |&portion| {
                crops.iter().map(move |&crop| Combination {
                    pest,
                    portion,
                    crop,
                })
            })
        })
        .collect()
}

/// Whether a label was collected on this portion and crop. A group-level
/// label counts if any member species was.
pub fn is_known_combination(taxonomy: &Taxonomy, label: &str, portion: Portion, crop: Crop) -> bool {
    let Some(taxon) = taxonomy.resolve(label) else {
        return false;
    };
    let names: Vec<&str> = match taxon {
        Taxon::Healthy => vec![HEALTHY],
        Taxon::Species(s) => vec![s.common_name.as_str()],
        Taxon::Group(g) => g.species.iter().map(String::as_str).collect(),
    };
    TABLE.iter().any(|(pest, portions, crops)| {
        names.iter().any(|n| n.eq_ignore_ascii_case(pest))
            && portions.contains(&portion)
            && crops.contains(&crop)
    })
}
