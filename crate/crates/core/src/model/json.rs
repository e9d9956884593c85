//! JSON text form of a [`Model`]. Field names mirror the Rust types; byte
//! blobs are standard base64.

use super::Model;

pub fn model_to_json(model: &Model<'_>) -> String {
    // Model contains only plain data; serialization cannot fail.
    serde_json::to_string_pretty(model).expect("model is always serializable")
}

pub fn model_from_json(text: &str) -> Result<Model<'static>, serde_json::Error> {
    serde_json::from_str(text)
}

pub(crate) mod blob_list {
    use std::borrow::Cow;

    use base64::{engine::general_purpose::STANDARD, Engine};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(blobs: &[Cow<'_, [u8]>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(blobs.iter().map(|b| STANDARD.encode(b)))
    }

    pub fn deserialize<'de, 'a, D: Deserializer<'de>>(d: D) -> Result<Vec<Cow<'a, [u8]>>, D::Error> {
        let encoded = Vec::<String>::deserialize(d)?;
        encoded
            .iter()
            .map(|s| STANDARD.decode(s).map(Cow::Owned).map_err(D::Error::custom))
            .collect()
    }
}

pub(crate) mod blob_map {
    use base64::{engine::general_purpose::STANDARD, Engine};
    use indexmap::IndexMap;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &IndexMap<String, Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(map.iter().map(|(k, v)| (k, STANDARD.encode(v))))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<IndexMap<String, Vec<u8>>, D::Error> {
        let encoded = IndexMap::<String, String>::deserialize(d)?;
        encoded
            .into_iter()
            .map(|(k, v)| STANDARD.decode(v).map(|b| (k, b)).map_err(D::Error::custom))
            .collect()
    }
}
