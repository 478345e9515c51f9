//! Wire format shared by `predict` and `serve`: one record per document.

use absa::corpus::AspectCatalog;
use absa::model::PredictionSet;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionItem {
    pub aspect: String,
    pub polarity: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub predictions: Vec<PredictionItem>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionRecord {
    pub fn from_set(id: String, set: &PredictionSet, catalog: &AspectCatalog) -> Self {
        let predictions = set
            .items
            .iter()
            .map(|(&aspect, &(polarity, confidence))| PredictionItem {
                aspect: catalog.name(aspect).to_string(),
                polarity: polarity.as_str().to_string(),
                confidence,
            })
            .collect();
        Self {
            id,
            predictions,
            error: None,
        }
    }

    pub fn failed(id: String, error: String) -> Self {
        Self {
            id,
            predictions: Vec::new(),
            error: Some(error),
        }
    }
}
