//! Problem types, entity pools and sentence templates.

use serde::{Deserialize, Serialize};

pub const POOL_SIZE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemType {
    FruitPrice,
    PersonAge,
    CarSpeed,
    CityPopulation,
    BookLength,
    PlanetTemperature,
}

impl ProblemType {
    pub const ALL: [ProblemType; 6] = [
        ProblemType::FruitPrice,
        ProblemType::PersonAge,
        ProblemType::CarSpeed,
        ProblemType::CityPopulation,
        ProblemType::BookLength,
        ProblemType::PlanetTemperature,
    ];

    pub fn entities(self) -> [&'static str; POOL_SIZE] {
        match self {
            ProblemType::FruitPrice => [
                "Mango",
                "Papaya",
                "Apricot",
                "Cherry",
                "Banana",
                "Coconut",
                "Guava",
                "Lychee",
                "Peach",
                "Plum",
                "Kiwi",
                "Pear",
                "Durian",
                "Tangerine",
                "Quince",
            ],
            ProblemType::PersonAge => [
                "Nancy", "Quinn", "Oliver", "Harriet", "Desmond", "Beatrice", "Lionel", "Marisol",
                "Theodore", "Priya", "Gustavo", "Eleanor", "Rafferty", "Ingrid", "Tobias",
            ],
            ProblemType::CarSpeed => [
                "Aurora", "Bolt", "Comet", "Drifter", "Ember", "Falcon", "Glider", "Hornet",
                "Javelin", "Kestrel", "Lynx", "Meteor", "Nomad", "Outrider", "Panther",
            ],
            ProblemType::CityPopulation => [
                "Arvandel",
                "Brisworth",
                "Caldmere",
                "Dunhollow",
                "Elmsreach",
                "Farrowgate",
                "Glenmoor",
                "Harrowby",
                "Ivystone",
                "Juniper Bay",
                "Larkspur",
                "Marrowfield",
                "Northwick",
                "Oakhaven",
                "Pellingford",
            ],
            ProblemType::BookLength => [
                "Saga of Lynora",
                "Fables of Yldora",
                "Chronicle of Ashen",
                "Songs of Virel",
                "Tales of Morwen",
                "Legends of Tharos",
                "Annals of Quellin",
                "Ballads of Serane",
                "Epic of Dravon",
                "Myths of Calder",
                "Verses of Ondrel",
                "Rhymes of Pellar",
                "Stories of Wenlow",
                "Poems of Zarith",
                "Letters of Brannoc",
            ],
            ProblemType::PlanetTemperature => [
                "Aldera", "Beltrax", "Cindral", "Draxis", "Erebon", "Fennix", "Gallora",
                "Hesperon", "Ixion", "Jovara", "Kythera", "Lumora", "Nebulon", "Orvane", "Pyrrhus",
            ],
        }
    }

    /// Inclusive value range; every value is a positive integer.
    pub fn value_range(self) -> (u32, u32) {
        match self {
            ProblemType::FruitPrice => (1, 200),
            ProblemType::PersonAge => (1, 120),
            ProblemType::CarSpeed => (20, 300),
            ProblemType::CityPopulation => (10, 999),
            ProblemType::BookLength => (20, 999),
            ProblemType::PlanetTemperature => (40, 750),
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            ProblemType::FruitPrice => "dollars",
            ProblemType::PersonAge => "years",
            ProblemType::CarSpeed => "kilometers per hour",
            ProblemType::CityPopulation => "thousand",
            ProblemType::BookLength => "pages",
            ProblemType::PlanetTemperature => "kelvin",
        }
    }

    /// Plural noun phrase for the prompt preamble.
    pub fn topic(self) -> &'static str {
        match self {
            ProblemType::FruitPrice => "fruit prices",
            ProblemType::PersonAge => "people's ages",
            ProblemType::CarSpeed => "car speeds",
            ProblemType::CityPopulation => "city populations",
            ProblemType::BookLength => "book lengths",
            ProblemType::PlanetTemperature => "planet temperatures",
        }
    }

    pub fn explicit(self, entity: &str, value: u32) -> String {
        match self {
            ProblemType::FruitPrice => format!("The price of {entity} is {value} dollars."),
            ProblemType::PersonAge => format!("{entity}'s age is {value}."),
            ProblemType::CarSpeed => {
                format!("The speed of {entity} is {value} kilometers per hour.")
            }
            ProblemType::CityPopulation => {
                format!("The population of {entity} is {value} thousand.")
            }
            ProblemType::BookLength => format!("The length of {entity} is {value} pages."),
            ProblemType::PlanetTemperature => {
                format!("The temperature of {entity} is {value} kelvin.")
            }
        }
    }

    /// States that `subject` exceeds (`greater`) or falls short of `reference` by `diff`.
    pub fn relational(self, subject: &str, diff: u32, greater: bool, reference: &str) -> String {
        let pick = |up: &'static str, down: &'static str| if greater { up } else { down };
        match self {
            ProblemType::FruitPrice => {
                format!(
                    "{subject} is {diff} dollars {} than {reference}.",
                    pick("more expensive", "cheaper")
                )
            }
            ProblemType::PersonAge => format!(
                "{subject} is {diff} years {} than {reference}.",
                pick("older", "younger")
            ),
            ProblemType::CarSpeed => {
                format!(
                    "{subject} is {diff} kilometers per hour {} than {reference}.",
                    pick("faster", "slower")
                )
            }
            ProblemType::CityPopulation => {
                format!(
                    "{subject} has {diff} thousand {} residents than {reference}.",
                    pick("more", "fewer")
                )
            }
            ProblemType::BookLength => format!(
                "The length of {subject} is {diff} pages {} than the length of {reference}.",
                pick("longer", "shorter")
            ),
            ProblemType::PlanetTemperature => {
                format!(
                    "{subject} is {diff} kelvin {} than {reference}.",
                    pick("hotter", "colder")
                )
            }
        }
    }

    pub fn question(self, entity: &str) -> String {
        match self {
            ProblemType::FruitPrice => format!("What is the price of {entity}?"),
            ProblemType::PersonAge => format!("What is {entity}'s age?"),
            ProblemType::CarSpeed => format!("What is the speed of {entity}?"),
            ProblemType::CityPopulation => format!("What is the population of {entity}?"),
            ProblemType::BookLength => format!("What is the length of {entity}?"),
            ProblemType::PlanetTemperature => format!("What is the temperature of {entity}?"),
        }
    }
}
