//! Random sender/receiver/carrier strings.

use rand::seq::IndexedRandom;
use rand::Rng;

const FIRST: &[&str] = &[
    "ANNA", "LUKAS", "MARIA", "JONAS", "SOFIA", "DANIEL", "EMMA", "PAUL", "LENA", "FELIX",
    "MIN-JUN", "SEO-YEON", "JAMES", "OLIVIA", "NOAH", "CHLOE", "MATEO", "LUCIA", "HUGO", "CLARA",
    "YUKI", "KENJI", "IVAN", "NINA",
];
const LAST: &[&str] = &[
    "MUELLER", "SCHMIDT", "KIM", "LEE", "PARK", "SMITH", "JOHNSON", "GARCIA", "ROSSI", "BERNARD",
    "DUBOIS", "WAGNER", "BECKER", "TANAKA", "SATO", "NOVAK", "HORVATH", "JANSEN", "SILVA", "COSTA",
    "NIELSEN",
];
const STREETS: &[&str] = &[
    "HAUPTSTRASSE",
    "BAHNHOFSTR",
    "MAIN ST",
    "OAK AVE",
    "RUE DE LYON",
    "VIA ROMA",
    "GANGNAM-DAERO",
    "PARK LANE",
    "KINGS ROAD",
    "LINDENWEG",
    "MARKTPLATZ",
    "ELM STREET",
    "CALLE MAYOR",
    "SCHULWEG",
];
const CITIES: &[(&str, &str)] = &[
    ("SAARBRUECKEN", "GERMANY"),
    ("KAISERSLAUTERN", "GERMANY"),
    ("BERLIN", "GERMANY"),
    ("SEOUL", "KOREA"),
    ("BUSAN", "KOREA"),
    ("LYON", "FRANCE"),
    ("PARIS", "FRANCE"),
    ("MILANO", "ITALY"),
    ("MADRID", "SPAIN"),
    ("BOSTON MA", "USA"),
    ("AUSTIN TX", "USA"),
    ("OSAKA", "JAPAN"),
    ("WIEN", "AUSTRIA"),
];
const CARRIERS: &[&str] = &[
    "SWIFTPOST",
    "EURO EXPRESS",
    "PARCELCO",
    "KOREX",
    "GLOBAL SHIP",
    "DPX",
    "FASTLANE",
];

fn truncate(mut s: String, max_chars: usize) -> String {
    if s.chars().count() > max_chars {
        s = s.chars().take(max_chars).collect();
    }
    s.trim_end().to_string()
}

fn postcode<R: Rng>(rng: &mut R) -> String {
    format!("{:05}", rng.random_range(1000..99999))
}

/// Address lines (name, street, city, country), each at most `max_chars` long.
pub fn address<R: Rng>(rng: &mut R, max_chars: usize) -> Vec<String> {
    let (city, country) = *CITIES.choose(rng).expect("nonempty");
    let lines = vec![
        format!(
            "{} {}",
            FIRST.choose(rng).expect("nonempty"),
            LAST.choose(rng).expect("nonempty")
        ),
        format!(
            "{} {}",
            STREETS.choose(rng).expect("nonempty"),
            rng.random_range(1..300)
        ),
        format!("{} {}", postcode(rng), city),
        country.to_string(),
    ];
    lines
        .into_iter()
        .map(|l| truncate(l, max_chars.max(1)))
        .collect()
}

pub fn sender<R: Rng>(rng: &mut R, max_chars: usize) -> Vec<String> {
    let mut lines = vec!["FROM:".to_string()];
    lines.extend(address(rng, max_chars).into_iter().take(3));
    lines
        .into_iter()
        .map(|l| truncate(l, max_chars.max(1)))
        .collect()
}

pub fn carrier<R: Rng>(rng: &mut R) -> &'static str {
    CARRIERS.choose(rng).expect("nonempty")
}

/// Tracking number in subset B (letters and digits).
pub fn tracking<R: Rng>(rng: &mut R, len: usize) -> String {
    const ALPHABET: &[u8] = b"0123456789ABCDEFGHJKLMNPQRSTUVWXYZ";
    let mut s = String::from("1Z");
    for _ in 2..len.max(3) {
        s.push(*ALPHABET.choose(rng).expect("nonempty") as char);
    }
    s
}
