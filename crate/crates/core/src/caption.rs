//! Templated facial captions and the 40 CelebA attributes they describe.
//!
//! Rendering is a fixed template over attribute groups; parsing spots the
//! phrases of a versioned phrase table (`data/caption-grammar-v1.txt`) in
//! each sentence and infers gender from pronouns and nouns.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use rand::Rng;

use crate::error::{Error, Result};

pub const NUM_ATTRIBUTES: usize = 40;

/// CelebA attribute names in the dataset's canonical order.
pub const ATTRIBUTE_NAMES: [&str; NUM_ATTRIBUTES] = [
    "5_o_Clock_Shadow",
    "Arched_Eyebrows",
    "Attractive",
    "Bags_Under_Eyes",
    "Bald",
    "Bangs",
    "Big_Lips",
    "Big_Nose",
    "Black_Hair",
    "Blond_Hair",
    "Blurry",
    "Brown_Hair",
    "Bushy_Eyebrows",
    "Chubby",
    "Double_Chin",
    "Eyeglasses",
    "Goatee",
    "Gray_Hair",
    "Heavy_Makeup",
    "High_Cheekbones",
    "Male",
    "Mouth_Slightly_Open",
    "Mustache",
    "Narrow_Eyes",
    "No_Beard",
    "Oval_Face",
    "Pale_Skin",
    "Pointy_Nose",
    "Receding_Hairline",
    "Rosy_Cheeks",
    "Sideburns",
    "Smiling",
    "Straight_Hair",
    "Wavy_Hair",
    "Wearing_Earrings",
    "Wearing_Hat",
    "Wearing_Lipstick",
    "Wearing_Necklace",
    "Wearing_Necktie",
    "Young",
];

/// Index of an attribute in [`ATTRIBUTE_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Attribute(u8);

#[allow(non_upper_case_globals)]
impl Attribute {
    pub const FiveOClockShadow: Attribute = Attribute(0);
    pub const ArchedEyebrows: Attribute = Attribute(1);
    pub const Attractive: Attribute = Attribute(2);
    pub const BagsUnderEyes: Attribute = Attribute(3);
    pub const Bald: Attribute = Attribute(4);
    pub const Bangs: Attribute = Attribute(5);
    pub const BigLips: Attribute = Attribute(6);
    pub const BigNose: Attribute = Attribute(7);
    pub const BlackHair: Attribute = Attribute(8);
    pub const BlondHair: Attribute = Attribute(9);
    pub const Blurry: Attribute = Attribute(10);
    pub const BrownHair: Attribute = Attribute(11);
    pub const BushyEyebrows: Attribute = Attribute(12);
    pub const Chubby: Attribute = Attribute(13);
    pub const DoubleChin: Attribute = Attribute(14);
    pub const Eyeglasses: Attribute = Attribute(15);
    pub const Goatee: Attribute = Attribute(16);
    pub const GrayHair: Attribute = Attribute(17);
    pub const HeavyMakeup: Attribute = Attribute(18);
    pub const HighCheekbones: Attribute = Attribute(19);
    pub const Male: Attribute = Attribute(20);
    pub const MouthSlightlyOpen: Attribute = Attribute(21);
    pub const Mustache: Attribute = Attribute(22);
    pub const NarrowEyes: Attribute = Attribute(23);
    pub const NoBeard: Attribute = Attribute(24);
    pub const OvalFace: Attribute = Attribute(25);
    pub const PaleSkin: Attribute = Attribute(26);
    pub const PointyNose: Attribute = Attribute(27);
    pub const RecedingHairline: Attribute = Attribute(28);
    pub const RosyCheeks: Attribute = Attribute(29);
    pub const Sideburns: Attribute = Attribute(30);
    pub const Smiling: Attribute = Attribute(31);
    pub const StraightHair: Attribute = Attribute(32);
    pub const WavyHair: Attribute = Attribute(33);
    pub const WearingEarrings: Attribute = Attribute(34);
    pub const WearingHat: Attribute = Attribute(35);
    pub const WearingLipstick: Attribute = Attribute(36);
    pub const WearingNecklace: Attribute = Attribute(37);
    pub const WearingNecktie: Attribute = Attribute(38);
    pub const Young: Attribute = Attribute(39);

    pub const HAIR_COLORS: [Attribute; 4] = [
        Attribute::BlackHair,
        Attribute::BlondHair,
        Attribute::BrownHair,
        Attribute::GrayHair,
    ];

    pub fn all() -> impl Iterator<Item = Attribute> {
        (0..NUM_ATTRIBUTES as u8).map(Attribute)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        ATTRIBUTE_NAMES[self.index()]
    }

    /// Exact canonical name, or the same name with spaces for underscores in
    /// any letter case ("black hair" -> `Black_Hair`).
    pub fn from_name(name: &str) -> Result<Attribute> {
        let wanted = name.trim().replace(' ', "_");
        ATTRIBUTE_NAMES
            .iter()
            .position(|n| *n == wanted)
            .or_else(|| ATTRIBUTE_NAMES.iter().position(|n| n.eq_ignore_ascii_case(&wanted)))
            .map(|i| Attribute(i as u8))
            .ok_or_else(|| Error::UnknownAttribute {
                name: name.to_string(),
                valid: ATTRIBUTE_NAMES.join(", "),
            })
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The 40 binary attributes of one face.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AttributeVector(u64);

impl AttributeVector {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_attrs(attrs: impl IntoIterator<Item = Attribute>) -> Self {
        let mut v = Self::empty();
        for a in attrs {
            v.set(a, true);
        }
        v
    }

    pub fn from_names<S: AsRef<str>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut v = Self::empty();
        for n in names {
            v.set(Attribute::from_name(n.as_ref())?, true);
        }
        Ok(v)
    }

    pub fn get(&self, a: Attribute) -> bool {
        self.0 >> a.0 & 1 == 1
    }

    pub fn set(&mut self, a: Attribute, value: bool) {
        if value {
            self.0 |= 1 << a.0;
        } else {
            self.0 &= !(1 << a.0);
        }
    }

    pub fn with(mut self, a: Attribute, value: bool) -> Self {
        self.set(a, value);
        self
    }

    pub fn iter_set(&self) -> impl Iterator<Item = Attribute> + '_ {
        Attribute::all().filter(|a| self.get(*a))
    }

    pub fn count(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn bits(&self) -> u64 {
        self.0
    }

    /// 0/1 values in canonical order.
    pub fn to_flags(&self) -> [f64; NUM_ATTRIBUTES] {
        let mut out = [0.0; NUM_ATTRIBUTES];
        for a in self.iter_set() {
            out[a.index()] = 1.0;
        }
        out
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.iter_set().map(Attribute::name).collect()
    }

    /// Checks the exclusivity rules a rendered caption depends on: at most one
    /// hair colour, at most one of straight/wavy, and nothing about hair on a
    /// bald head.
    pub fn validate(&self) -> Result<()> {
        let colors: Vec<_> = Attribute::HAIR_COLORS.iter().filter(|a| self.get(**a)).collect();
        if colors.len() > 1 {
            return Err(Error::AttributeConflict(format!(
                "multiple hair colours: {}",
                colors.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
            )));
        }
        if self.get(Attribute::StraightHair) && self.get(Attribute::WavyHair) {
            return Err(Error::AttributeConflict(
                "Straight_Hair and Wavy_Hair are exclusive".into(),
            ));
        }
        if self.get(Attribute::Bald) {
            let hairy = [Attribute::StraightHair, Attribute::WavyHair, Attribute::Bangs]
                .into_iter()
                .chain(Attribute::HAIR_COLORS)
                .filter(|a| self.get(*a))
                .map(Attribute::name)
                .collect::<Vec<_>>();
            if !hairy.is_empty() {
                return Err(Error::AttributeConflict(format!(
                    "Bald excludes {}",
                    hairy.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Sets one attribute, clearing whatever it excludes.
    fn set_with_repairs(&mut self, a: Attribute, value: bool) {
        self.set(a, value);
        if !value {
            return;
        }
        if Attribute::HAIR_COLORS.contains(&a) {
            for c in Attribute::HAIR_COLORS {
                if c != a {
                    self.set(c, false);
                }
            }
            self.set(Attribute::Bald, false);
        } else if a == Attribute::Bald {
            for c in Attribute::HAIR_COLORS {
                self.set(c, false);
            }
            self.set(Attribute::StraightHair, false);
            self.set(Attribute::WavyHair, false);
            self.set(Attribute::Bangs, false);
        } else if a == Attribute::StraightHair || a == Attribute::WavyHair {
            let other = if a == Attribute::StraightHair {
                Attribute::WavyHair
            } else {
                Attribute::StraightHair
            };
            self.set(other, false);
            self.set(Attribute::Bald, false);
        } else if a == Attribute::Bangs {
            self.set(Attribute::Bald, false);
        }
    }

    /// A random vector satisfying [`AttributeVector::validate`].
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut v = Self::empty();
        for a in Attribute::all() {
            let p = if a == Attribute::Male { 0.5 } else { 0.25 };
            if rng.random_bool(p) {
                v.set_with_repairs(a, true);
            }
        }
        debug_assert!(v.validate().is_ok());
        v
    }
}

impl fmt::Debug for AttributeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.names()).finish()
    }
}

/// Sets `name` to `value`, then clears attributes the new value excludes
/// (another hair colour, hair on a bald head, ...).
pub fn flip_attribute(attrs: AttributeVector, name: &str, value: bool) -> Result<AttributeVector> {
    let a = Attribute::from_name(name)?;
    let mut out = attrs;
    out.set_with_repairs(a, value);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Parsed,
    Rendered,
}

/// Caption text; non-empty, every sentence ends with a period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    text: String,
    provenance: Provenance,
}

impl Caption {
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        split_sentences(&self.text)
    }
}

impl fmt::Display for Caption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

struct Pronouns {
    noun: &'static str,
    subject: &'static str,
    possessive: &'static str,
}

const MALE: Pronouns = Pronouns {
    noun: "man",
    subject: "He",
    possessive: "His",
};

const FEMALE: Pronouns = Pronouns {
    noun: "woman",
    subject: "She",
    possessive: "Her",
};

fn join_and(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn with_trailing_space(words: &[&str]) -> String {
    if words.is_empty() {
        String::new()
    } else {
        format!("{} ", words.join(" "))
    }
}

/// Deterministic template rendering. Every set attribute contributes exactly
/// one phrase; a vector with nothing to say gets the fallback sentence.
pub fn render_caption(attrs: &AttributeVector) -> Result<Caption> {
    use Attribute as A;
    attrs.validate()?;
    let has = |a: Attribute| attrs.get(a);
    let pick = |list: &[(Attribute, &'static str)]| -> Vec<&'static str> {
        list.iter().filter(|(a, _)| has(*a)).map(|(_, p)| *p).collect()
    };
    let p = if has(A::Male) { MALE } else { FEMALE };
    let mut out: Vec<String> = Vec::new();

    let face_adjs = pick(&[(A::Chubby, "chubby"), (A::DoubleChin, "double chined")]);
    let shape = pick(&[(A::OvalFace, "oval face"), (A::HighCheekbones, "high cheekbones")]);
    if !shape.is_empty() {
        out.push(format!("The {}{} has {}.", with_trailing_space(&face_adjs), p.noun, join_and(&shape)));
    } else if !face_adjs.is_empty() {
        out.push(format!("The {} has a {} face.", p.noun, face_adjs.join(" ")));
    }

    let facial_hair = pick(&[
        (A::FiveOClockShadow, "5 o'clock shadow"),
        (A::Goatee, "goatee"),
        (A::Mustache, "moustache"),
    ]);
    if !facial_hair.is_empty() {
        let tail = if has(A::Sideburns) { " with sideburns" } else { "" };
        out.push(format!("{} sports a {}{tail}.", p.subject, join_and(&facial_hair)));
    } else if has(A::Sideburns) {
        out.push(format!("{} sports sideburns.", p.subject));
    }
    if has(A::NoBeard) {
        out.push(format!("{} is clean-shaven.", p.subject));
    }

    if has(A::Bald) {
        out.push(format!("{} is bald.", p.subject));
    } else {
        let style = pick(&[(A::StraightHair, "straight"), (A::WavyHair, "wavy")]);
        let color = pick(&[
            (A::BlackHair, "black"),
            (A::BlondHair, "blond"),
            (A::BrownHair, "brown"),
            (A::GrayHair, "gray"),
        ]);
        let bangs = if has(A::Bangs) { " with bangs" } else { "" };
        match (style.first(), color.first()) {
            (Some(s), Some(c)) => out.push(format!(
                "{} has {s} hair which is {c} in colour{bangs}.",
                p.subject
            )),
            (Some(s), None) => out.push(format!("{} has {s} hair{bangs}.", p.subject)),
            (None, Some(c)) => out.push(format!("{} hair is {c} in colour{bangs}.", p.possessive)),
            (None, None) if has(A::Bangs) => out.push(format!("{} has bangs.", p.subject)),
            (None, None) => {}
        }
    }
    if has(A::RecedingHairline) {
        out.push(format!("{} has a receding hairline.", p.subject));
    }

    let nose = match (has(A::BigNose), has(A::PointyNose)) {
        (true, true) => Some("big pointy nose"),
        (true, false) => Some("big nose"),
        (false, true) => Some("pointy nose"),
        (false, false) => None,
    };
    let mut parts = pick(&[(A::BigLips, "big lips")]);
    parts.extend(nose);
    parts.extend(pick(&[(A::NarrowEyes, "narrow eyes"), (A::BagsUnderEyes, "bags under eyes")]));
    let mut features = join_and(&parts);
    let brows = match (has(A::ArchedEyebrows), has(A::BushyEyebrows)) {
        (true, true) => Some("arched bushy eyebrows"),
        (true, false) => Some("arched eyebrows"),
        (false, true) => Some("bushy eyebrows"),
        (false, false) => None,
    };
    if let Some(b) = brows {
        features = if features.is_empty() { b.to_string() } else { format!("{features} with {b}") };
    }
    if has(A::MouthSlightlyOpen) {
        features = if features.is_empty() {
            "a slightly open mouth".to_string()
        } else {
            format!("{features} and a slightly open mouth")
        };
    }
    if !features.is_empty() {
        out.push(format!("{} has {features}.", p.subject));
    }

    let others = pick(&[(A::Young, "young"), (A::Attractive, "attractive")]);
    let complements = pick(&[
        (A::PaleSkin, "pale skin"),
        (A::RosyCheeks, "rosy cheeks"),
        (A::HeavyMakeup, "heavy makeup"),
    ]);
    if !complements.is_empty() {
        let adjs = match (has(A::Smiling), others.is_empty()) {
            (true, false) => format!("smiling, {} ", others.join(" ")),
            (true, true) => "smiling ".to_string(),
            (false, _) => with_trailing_space(&others),
        };
        out.push(format!("The {adjs}{} has {}.", p.noun, join_and(&complements)));
    } else if has(A::Smiling) {
        out.push(format!("The {}{} is smiling.", with_trailing_space(&others), p.noun));
    } else if !others.is_empty() {
        out.push(format!("The {} looks {}.", p.noun, join_and(&others)));
    }

    let wearing = pick(&[
        (A::Eyeglasses, "eyeglasses"),
        (A::WearingHat, "a hat"),
        (A::WearingEarrings, "earrings"),
        (A::WearingNecklace, "necklace"),
        (A::WearingLipstick, "lipstick"),
        (A::WearingNecktie, "necktie"),
    ]);
    if !wearing.is_empty() {
        out.push(format!("{}'s wearing {}.", p.subject, join_and(&wearing)));
    }
    if has(A::Blurry) {
        out.push("The photo is blurry.".to_string());
    }

    if out.is_empty() {
        out.push(format!("The {} looks ordinary.", p.noun));
    }
    Ok(Caption {
        text: out.join(" "),
        provenance: Provenance::Rendered,
    })
}

/// Parse result: the attributes found plus sentences nothing matched in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCaption {
    pub attrs: AttributeVector,
    pub warnings: Vec<String>,
}

pub struct Grammar {
    version: u32,
    /// First token -> phrases starting with it, longest first.
    phrases: HashMap<String, Vec<(Vec<String>, AttributeVector)>>,
}

pub const GRAMMAR_V1: &str = include_str!("../data/caption-grammar-v1.txt");

impl Grammar {
    pub fn parse(text: &str) -> Result<Grammar> {
        let mut version = None;
        let mut phrases: HashMap<String, Vec<(Vec<String>, AttributeVector)>> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| Error::Format {
                path: "caption grammar".into(),
                reason: format!("line {}: {reason}", lineno + 1),
            };
            let (phrase, attrs) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected <phrase> TAB <attributes>".into()))?;
            if phrase == "version" {
                version = Some(attrs.parse().map_err(|_| bad(format!("bad version {attrs:?}")))?);
                continue;
            }
            let v = if attrs == "-" {
                AttributeVector::empty()
            } else {
                AttributeVector::from_names(attrs.split(','))?
            };
            let tokens = tokenize(phrase);
            let Some(first) = tokens.first().cloned() else {
                return Err(bad("empty phrase".into()));
            };
            phrases.entry(first).or_default().push((tokens, v));
        }
        for list in phrases.values_mut() {
            list.sort_by_key(|e| std::cmp::Reverse(e.0.len()));
        }
        let version = version.ok_or_else(|| Error::Format {
            path: "caption grammar".into(),
            reason: "missing version line".into(),
        })?;
        Ok(Grammar { version, phrases })
    }

    /// The phrase table shipped with the crate.
    pub fn builtin() -> &'static Grammar {
        static BUILTIN: OnceLock<Grammar> = OnceLock::new();
        BUILTIN.get_or_init(|| Grammar::parse(GRAMMAR_V1).expect("shipped grammar is valid"))
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn parse_caption(&self, text: &str) -> Result<ParsedCaption> {
        if text.trim().is_empty() {
            return Err(Error::CaptionParse(text.to_string()));
        }
        let mut attrs = AttributeVector::empty();
        let mut warnings = Vec::new();
        let mut recognized_any = false;
        let (mut male, mut female) = (0usize, 0usize);
        for sentence in split_sentences(text) {
            let tokens = tokenize(sentence);
            let mut matched = false;
            let mut i = 0;
            while i < tokens.len() {
                match tokens[i].as_str() {
                    "man" | "men" | "he" | "his" | "him" | "himself" | "male" | "gentleman" => male += 1,
                    "woman" | "women" | "she" | "her" | "hers" | "herself" | "female" | "lady" => female += 1,
                    _ => {}
                }
                let hit = self.phrases.get(&tokens[i]).and_then(|cands| {
                    cands.iter().find(|(p, _)| tokens[i..].starts_with(p))
                });
                match hit {
                    Some((p, v)) => {
                        attrs = AttributeVector(attrs.0 | v.0);
                        matched = true;
                        i += p.len();
                    }
                    None => i += 1,
                }
            }
            if matched {
                recognized_any = true;
            } else {
                warnings.push(sentence.trim().to_string());
            }
        }
        if !recognized_any {
            return Err(Error::CaptionParse(text.to_string()));
        }
        attrs.set(Attribute::Male, male > female);
        Ok(ParsedCaption { attrs, warnings })
    }
}

/// Parses with the built-in grammar.
pub fn parse_caption(text: &str) -> Result<ParsedCaption> {
    Grammar::builtin().parse_caption(text)
}

/// Wraps user text as a parsed caption, appending a final period if missing.
pub fn caption_from_text(text: &str) -> Result<Caption> {
    let t = text.trim();
    if t.is_empty() {
        return Err(Error::CaptionParse(text.to_string()));
    }
    let text = if t.ends_with('.') { t.to_string() } else { format!("{t}.") };
    Ok(Caption {
        text,
        provenance: Provenance::Parsed,
    })
}

fn split_sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '!', '?']).filter(|s| !s.trim().is_empty())
}

/// Lowercase word tokens with spelling variants folded and possessive
/// `'s` removed; hyphens split words.
pub(crate) fn tokenize(text: &str) -> Vec<String> {
    text.replace(['\u{2019}', '\u{2018}'], "'")
        .to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .map(|w| {
            let w = w.strip_suffix("'s").unwrap_or(w);
            match w {
                "colour" => "color",
                "moustache" => "mustache",
                "grey" => "gray",
                "blonde" => "blond",
                other => other,
            }
            .to_string()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::collections::HashSet;

    const SAMPLE_MAN: &str = "The man has a chubby face. He sports a goatee with sideburns. \
        His hair is black in color. He has narrow eyes and a slightly open mouth. The man looks young.";
    const SAMPLE_WOMAN: &str = "The woman has oval face and high cheekbones. She has big lips with \
        arched eyebrows and a slightly open mouth. The smiling, young attractive woman has heavy \
        makeup. She's wearing earrings, necklace and lipstick.";

    fn attrs(names: &[&str]) -> AttributeVector {
        AttributeVector::from_names(names).unwrap()
    }

    #[test]
    fn parses_sample_man() {
        let p = parse_caption(SAMPLE_MAN).unwrap();
        assert_eq!(
            p.attrs,
            attrs(&[
                "Male",
                "Chubby",
                "Goatee",
                "Sideburns",
                "Black_Hair",
                "Narrow_Eyes",
                "Mouth_Slightly_Open",
                "Young"
            ])
        );
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn single_phrase_female() {
        let p = parse_caption("She has arched eyebrows.").unwrap();
        assert_eq!(p.attrs, attrs(&["Arched_Eyebrows"]));
        assert!(!p.attrs.get(Attribute::Male));
    }

    #[test]
    fn renders_sample_woman_verbatim() {
        let v = attrs(&[
            "Oval_Face",
            "High_Cheekbones",
            "Big_Lips",
            "Arched_Eyebrows",
            "Mouth_Slightly_Open",
            "Smiling",
            "Young",
            "Attractive",
            "Heavy_Makeup",
            "Wearing_Earrings",
            "Wearing_Necklace",
            "Wearing_Lipstick",
        ]);
        let c = render_caption(&v).unwrap();
        for phrase in [
            "oval face",
            "high cheekbones",
            "big lips",
            "arched eyebrows",
            "slightly open mouth",
            "earrings, necklace and lipstick",
        ] {
            assert!(c.text().contains(phrase), "missing {phrase:?} in {c}");
        }
        assert_eq!(c.text(), SAMPLE_WOMAN);
        assert_eq!(c.provenance(), Provenance::Rendered);
    }

    #[test]
    fn renders_sample_man_with_canonical_spelling() {
        let v = parse_caption(SAMPLE_MAN).unwrap().attrs;
        assert_eq!(render_caption(&v).unwrap().text(), SAMPLE_MAN.replace("color", "colour"));
    }

    #[test]
    fn empty_vector_falls_back() {
        let man = AttributeVector::empty().with(Attribute::Male, true);
        assert_eq!(render_caption(&man).unwrap().text(), "The man looks ordinary.");
        assert_eq!(parse_caption("The man looks ordinary.").unwrap().attrs, man);
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut rng = seeded(3);
        for _ in 0..20 {
            let v = AttributeVector::random(&mut rng);
            assert_eq!(render_caption(&v).unwrap(), render_caption(&v).unwrap());
        }
    }

    #[test]
    fn round_trip_and_injectivity_on_1000_samples() {
        let mut rng = seeded(2024);
        let mut seen = HashMap::new();
        for _ in 0..1000 {
            let v = AttributeVector::random(&mut rng);
            let c = render_caption(&v).unwrap();
            assert!(c.text().ends_with('.'));
            let back = parse_caption(c.text()).unwrap();
            assert_eq!(back.attrs, v, "{c}");
            assert!(back.warnings.is_empty(), "{c}: {:?}", back.warnings);
            if let Some(prev) = seen.insert(c.text().to_string(), v) {
                assert_eq!(prev, v);
            }
        }
    }

    #[test]
    fn spelling_variants_and_case() {
        let a = parse_caption("HE SPORTS A MOUSTACHE. HIS HAIR IS GREY IN COLOUR.").unwrap();
        let b = parse_caption("he sports a mustache. his hair is gray in color.").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.attrs, attrs(&["Male", "Mustache", "Gray_Hair"]));
    }

    #[test]
    fn parses_other_published_samples() {
        let p = parse_caption(
            "The man has a double chined face. He sports a 5 o'clock shadow. He has a receding \
             hairline. He has big lips and big pointy nose and a slightly open mouth. The man is \
             smiling. He's wearing necktie.",
        )
        .unwrap();
        assert_eq!(
            p.attrs,
            attrs(&[
                "Male",
                "Double_Chin",
                "5_o_Clock_Shadow",
                "Receding_Hairline",
                "Big_Lips",
                "Big_Nose",
                "Pointy_Nose",
                "Mouth_Slightly_Open",
                "Smiling",
                "Wearing_Necktie"
            ])
        );
        let q = parse_caption(
            "The chubby double chined man has oval face and high cheekbones. He sports a 5 \
             o'clock shadow, goatee and moustache. He is bald.",
        )
        .unwrap();
        assert!(q.attrs.get(Attribute::Bald) && q.attrs.get(Attribute::Mustache));
        assert!(q.attrs.get(Attribute::Chubby) && q.attrs.get(Attribute::DoubleChin));
    }

    #[test]
    fn unrecognized_sentences_are_warnings() {
        let p = parse_caption("She has wavy hair. The weather is nice.").unwrap();
        assert_eq!(p.attrs, attrs(&["Wavy_Hair"]));
        assert_eq!(p.warnings, vec!["The weather is nice".to_string()]);
        assert!(matches!(parse_caption("Nothing to see here."), Err(Error::CaptionParse(_))));
        assert!(parse_caption("   ").is_err());
    }

    #[test]
    fn conflicting_vectors_do_not_render() {
        let two_colors = attrs(&["Black_Hair", "Brown_Hair"]);
        assert!(matches!(render_caption(&two_colors), Err(Error::AttributeConflict(_))));
        assert!(render_caption(&attrs(&["Bald", "Bangs"])).is_err());
    }

    #[test]
    fn flip_repairs_exclusive_groups() {
        let a = attrs(&["Brown_Hair", "Smiling"]);
        let b = flip_attribute(a, "Black_Hair", true).unwrap();
        assert!(b.get(Attribute::BlackHair) && !b.get(Attribute::BrownHair));
        assert!(b.get(Attribute::Smiling));
        assert_eq!(flip_attribute(a, "Smiling", true).unwrap(), a);
        let bald = flip_attribute(attrs(&["Wavy_Hair", "Bangs", "Blond_Hair"]), "Bald", true).unwrap();
        assert_eq!(bald, attrs(&["Bald"]));
    }

    #[test]
    fn flip_and_back_is_identity_for_every_name() {
        let bases = [
            AttributeVector::empty(),
            AttributeVector::empty().with(Attribute::Male, true),
            parse_caption(SAMPLE_MAN).unwrap().attrs,
        ];
        for base in bases {
            for name in ATTRIBUTE_NAMES {
                let a = Attribute::from_name(name).unwrap();
                let flipped = flip_attribute(base, name, !base.get(a)).unwrap();
                // Repairs are one-way; only compare when none fired.
                if flipped.count().abs_diff(base.count()) != 1 {
                    continue;
                }
                assert_eq!(flip_attribute(flipped, name, base.get(a)).unwrap(), base, "{name}");
            }
        }
        let empty_roundtrips = ATTRIBUTE_NAMES
            .iter()
            .filter(|n| {
                let f = flip_attribute(AttributeVector::empty(), n, true).unwrap();
                flip_attribute(f, n, false).unwrap() == AttributeVector::empty()
            })
            .count();
        assert_eq!(empty_roundtrips, NUM_ATTRIBUTES);
    }

    #[test]
    fn unknown_names_list_valid_ones() {
        let err = flip_attribute(AttributeVector::empty(), "Purple_Hair", true).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Purple_Hair") && msg.contains("Wearing_Necktie"));
        assert_eq!(Attribute::from_name("black hair").unwrap(), Attribute::BlackHair);
    }

    #[test]
    fn grammar_file_covers_every_attribute() {
        let g = Grammar::builtin();
        assert_eq!(g.version(), 1);
        let covered: HashSet<Attribute> = g
            .phrases
            .values()
            .flatten()
            .flat_map(|(_, v)| v.iter_set().collect::<Vec<_>>())
            .collect();
        let expected: HashSet<Attribute> =
            Attribute::all().filter(|a| *a != Attribute::Male).collect();
        assert_eq!(covered, expected);
    }
}
