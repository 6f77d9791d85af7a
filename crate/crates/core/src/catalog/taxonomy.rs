use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

pub const HEALTHY: &str = "healthy";

/// One row of the species table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesEntry {
    /// Main-scheme class IDs this species contributes to.
    pub class_ids: Vec<u8>,
    pub common_name: String,
    pub scientific_name: String,
    pub integration_group: String,
}

/// Species that share control methods and may be merged into one class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationGroup {
    pub name: String,
    pub species: Vec<String>,
    pub class_ids: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Taxon<'a> {
    Healthy,
    Species(&'a SpeciesEntry),
    /// A label given at group level, e.g. `whitefly`.
    Group(&'a IntegrationGroup),
}

impl Taxon<'_> {
    pub fn canonical_label(&self) -> &str {
        match self {
            Taxon::Healthy => HEALTHY,
            Taxon::Species(s) => &s.common_name,
            Taxon::Group(g) => &g.name,
        }
    }

    pub fn group(&self) -> Option<&str> {
        match self {
            Taxon::Healthy => None,
            Taxon::Species(s) => Some(&s.integration_group),
            Taxon::Group(g) => Some(&g.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    species: Vec<SpeciesEntry>,
    groups: Vec<IntegrationGroup>,
}

// (class ids, group name, common name, scientific name)
const SEED: [(&[u8], &str, &str, &str); 20] = [
    (&[1, 2, 3], "broad mite", "broad mite", "Polyphagotarsonemus latus (Banks)"),
    (&[4], "spider mite", "Kanzawa spider mite", "Tetranychus kanzawai Kishida"),
    (&[4], "spider mite", "twospotted spider mite", "Tetranychus urticae Koch"),
    (&[5], "tomato russet mite", "tomato russet mite", "Aculops lycopersici (Massee)"),
    (&[6], "whitefly", "greenhouse whitefly", "Trialeurodes vaporariorum (Westwood)"),
    (&[6], "whitefly", "tobacco whitefly", "Bemisia tabaci (Gennadius)"),
    (&[7], "aphid", "cotton aphid", "Aphis gossypii Glover"),
    (&[7], "aphid", "green peach aphid", "Myzus persicae (Sulzer)"),
    (&[8, 9], "mealybug", "Solanum mealybug", "Phenacoccus solani Ferris"),
    (&[8, 9], "mealybug", "Madeira mealybug", "Phenacoccus madeirensis Green"),
    (&[10, 11, 12, 13], "thrips", "western flower thrips", "Frankliniella occidentalis (Pergande)"),
    (&[10, 11, 12, 13], "thrips", "melon thrips", "Thrips palmi Karny"),
    (&[10, 11, 12, 13], "thrips", "onion thrips", "Thrips tabaci Lindeman"),
    (&[10, 11, 12, 13], "thrips", "Eurasian flower thrips", "Frankliniella intonsa (Trybom)"),
    (&[14], "hadda beetle", "hadda beetle", "Henosepilachna vigintioctopunctata (Fabricius)"),
    (&[15], "leaf miner", "vegetable leafminer", "Liriomyza sativae Blanchard"),
    (&[15], "leaf miner", "serpentine leafminer", "Liriomyza trifolii (Burgess)"),
    (&[15], "leaf miner", "tomato leafminer", "Liriomyza bryoniae (Kalgenbach)"),
    (&[16, 17], "cotton bollworm", "cotton bollworm", "Helicoverpa armigera (Hübner)"),
    (&[18], "tobacco cutworm", "tobacco cutworm", "Spodoptera litura (Fabricius)"),
];

impl Taxonomy {
    /// The 20 species and 11 integration groups of the study.
    pub fn seeded() -> Self {
        let species = SEED
            .iter()
            .map(|(ids, group, common, scientific)| SpeciesEntry {
                class_ids: ids.to_vec(),
                common_name: common.to_string(),
                scientific_name: scientific.to_string(),
                integration_group: group.to_string(),
            })
            .collect();
        Self::from_species(species).expect("seed taxonomy is consistent")
    }

    /// Builds groups from species rows; fails on duplicate names or on a
    /// group whose members disagree on class IDs.
    pub fn from_species(species: Vec<SpeciesEntry>) -> Result<Self> {
        let mut groups: Vec<IntegrationGroup> = Vec::new();
        let mut seen = BTreeMap::new();
        for entry in &species {
            let key = entry.common_name.to_lowercase();
            if seen.insert(key, ()).is_some() {
                return Err(Error::invalid(format!(
                    "species {:?} listed twice",
                    entry.common_name
                )));
            }
            match groups.iter_mut().find(|g| g.name == entry.integration_group) {
                Some(group) => {
                    if group.class_ids != entry.class_ids {
                        return Err(Error::invalid(format!(
                            "group {:?} has inconsistent class ids",
                            group.name
                        )));
                    }
                    group.species.push(entry.common_name.clone());
                }
                None => groups.push(IntegrationGroup {
                    name: entry.integration_group.clone(),
                    species: vec![entry.common_name.clone()],
                    class_ids: entry.class_ids.clone(),
                }),
            }
        }
        Ok(Self { species, groups })
    }

    /// Reads the species table, one JSON row per line.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_species(jsonl::read_lines(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_lines(path, &self.species)
    }

    pub fn species(&self) -> &[SpeciesEntry] {
        &self.species
    }

    pub fn groups(&self) -> &[IntegrationGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&IntegrationGroup> {
        self.groups.iter().find(|g| g.name.eq_ignore_ascii_case(name))
    }

    /// Resolves a label (case-insensitive) to healthy, a species, or a group.
    pub fn resolve(&self, label: &str) -> Option<Taxon<'_>> {
        let label = label.trim();
        if label.eq_ignore_ascii_case(HEALTHY) {
            return Some(Taxon::Healthy);
        }
        if let Some(s) = self
            .species
            .iter()
            .find(|s| s.common_name.eq_ignore_ascii_case(label))
        {
            return Some(Taxon::Species(s));
        }
        self.group(label).map(Taxon::Group)
    }

    /// Species names a label stands for: itself, or every member of a group.
    pub fn expand(&self, label: &str) -> Vec<&str> {
        match self.resolve(label) {
            Some(Taxon::Healthy) => vec![HEALTHY],
            Some(Taxon::Species(s)) => vec![s.common_name.as_str()],
            Some(Taxon::Group(g)) => g.species.iter().map(String::as_str).collect(),
            None => Vec::new(),
        }
    }

    pub fn group_of(&self, label: &str) -> Option<&str> {
        self.resolve(label).and_then(|t| match t {
            Taxon::Healthy => None,
            Taxon::Species(s) => Some(s.integration_group.as_str()),
            Taxon::Group(g) => Some(g.name.as_str()),
        })
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    #[test]
    fn seed_has_twenty_species_and_eighteen_class_ids() {
        let tax = Taxonomy::seeded();
        assert_eq!(tax.species().len(), 20);
        assert_eq!(tax.groups().len(), 11);
        let ids: BTreeSet<u8> = tax
            .groups()
            .iter()
            .flat_map(|g| g.class_ids.iter().copied())
            .collect();
        assert_eq!(ids, (1..=18).collect());
    }

    #[test]
    fn spider_mites_share_a_group() {
        let tax = Taxonomy::seeded();
        assert_eq!(tax.group_of("Kanzawa spider mite"), Some("spider mite"));
        assert_eq!(tax.group_of("twospotted spider mite"), Some("spider mite"));
        assert_eq!(tax.group_of("whitefly"), Some("whitefly"));
        assert_eq!(tax.expand("aphid"), ["cotton aphid", "green peach aphid"]);
        assert!(tax.resolve("unicorn moth").is_none());
        assert_eq!(tax.resolve("HEALTHY"), Some(Taxon::Healthy));
    }

    #[test]
    fn every_species_is_in_exactly_one_group() {
        let tax = Taxonomy::seeded();
        for s in tax.species() {
            let holders = tax
                .groups()
                .iter()
                .filter(|g| g.species.contains(&s.common_name))
                .count();
            assert_eq!(holders, 1, "{}", s.common_name);
        }
    }

    #[test]
    fn round_trips_through_species_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("taxonomy.jsonl");
        let tax = Taxonomy::seeded();
        tax.save(&path).unwrap();
        assert_eq!(Taxonomy::load(&path).unwrap(), tax);
    }

    #[test]
    fn inconsistent_groups_are_rejected() {
        let mut rows = Taxonomy::seeded().species().to_vec();
        rows[1].class_ids = vec![99];
        assert!(Taxonomy::from_species(rows).is_err());
    }
}
