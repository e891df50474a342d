//! BMI, BMR, body-fat estimates, malnutrition screening and diet plans.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Malnutrition cutoff; a BMI exactly at the cutoff counts as healthy.
pub const MALNUTRITION_BMI: f64 = 18.5;
pub const OBESITY_BMI: f64 = 30.0;
/// BMI used to derive the ideal weight for a height.
pub const IDEAL_BMI: f64 = 22.0;
pub const KCAL_PER_KG: f64 = 7700.0;
pub const MIN_DAILY_KCAL: f64 = 1200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    /// Two-slot indicator: male `(1, 0)`, female `(0, 1)`.
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Gender::Male => [1.0, 0.0],
            Gender::Female => [0.0, 1.0],
        }
    }

    fn bmr_intercept(self) -> f64 {
        match self {
            Gender::Male => 5.0,
            Gender::Female => -161.0,
        }
    }

    fn bfp_offset(self) -> f64 {
        match self {
            Gender::Male => 16.2,
            Gender::Female => 5.4,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            other => Err(Error::param(format!("unknown gender `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Healthy,
    Malnourished,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityLevel {
    #[default]
    Sedentary,
    Light,
    Moderate,
    Active,
}

impl ActivityLevel {
    pub fn factor(self) -> f64 {
        match self {
            ActivityLevel::Sedentary => 1.2,
            ActivityLevel::Light => 1.375,
            ActivityLevel::Moderate => 1.55,
            ActivityLevel::Active => 1.725,
        }
    }
}

impl std::str::FromStr for ActivityLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sedentary" => Ok(Self::Sedentary),
            "light" => Ok(Self::Light),
            "moderate" => Ok(Self::Moderate),
            "active" => Ok(Self::Active),
            other => Err(Error::param(format!("unknown activity level `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DietType {
    Balanced,
    HighProtein,
    LowCarb,
    Vegetarian,
}

impl DietType {
    /// Carbohydrate / protein / fat share of calories, in percent.
    pub fn macro_split(self) -> MacroSplit {
        let (carbs, protein, fat) = match self {
            DietType::Balanced => (50, 20, 30),
            DietType::HighProtein => (40, 35, 25),
            DietType::LowCarb => (20, 30, 50),
            DietType::Vegetarian => (55, 18, 27),
        };
        MacroSplit {
            carbs_pct: carbs,
            protein_pct: protein,
            fat_pct: fat,
        }
    }
}

impl std::str::FromStr for DietType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Self::Balanced),
            "high-protein" => Ok(Self::HighProtein),
            "low-carb" => Ok(Self::LowCarb),
            "vegetarian" => Ok(Self::Vegetarian),
            other => Err(Error::param(format!("unknown diet type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroSplit {
    pub carbs_pct: u8,
    pub protein_pct: u8,
    pub fat_pct: u8,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be positive, got {v}")))
    }
}

/// kg / m².
pub fn bmi(weight_kg: f64, height_cm: f64) -> Result<f64> {
    positive("weight", weight_kg)?;
    positive("height", height_cm)?;
    let m = height_cm / 100.0;
    Ok(weight_kg / (m * m))
}

/// 703 · lb / in².
pub fn bmi_imperial(weight_lb: f64, height_in: f64) -> Result<f64> {
    positive("weight", weight_lb)?;
    positive("height", height_in)?;
    Ok(703.0 * weight_lb / (height_in * height_in))
}

/// Mifflin-St Jeor resting energy expenditure, kcal/day.
pub fn bmr(weight_kg: f64, height_cm: f64, age_years: f64, gender: Gender) -> Result<f64> {
    positive("weight", weight_kg)?;
    positive("height", height_cm)?;
    positive("age", age_years)?;
    Ok(10.0 * weight_kg + 6.25 * height_cm - 5.0 * age_years + gender.bmr_intercept())
}

/// Body fat percentage from BMI and age.
pub fn bfp(bmi: f64, age_years: f64, gender: Gender) -> Result<f64> {
    positive("bmi", bmi)?;
    positive("age", age_years)?;
    Ok(1.2 * bmi + 0.23 * age_years - gender.bfp_offset())
}

pub fn classify_malnutrition(bmi: f64) -> Classification {
    if bmi < MALNUTRITION_BMI {
        Classification::Malnourished
    } else {
        Classification::Healthy
    }
}

pub fn ideal_weight(height_cm: f64) -> Result<f64> {
    positive("height", height_cm)?;
    let m = height_cm / 100.0;
    Ok(IDEAL_BMI * m * m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub bmi: f64,
    pub bmr: f64,
    pub active_bmr: f64,
    pub bfp: f64,
    pub ideal_weight_kg: f64,
    pub classification: Classification,
    /// Advisory only; obesity does not change `classification`.
    pub obese: bool,
    pub activity_level: ActivityLevel,
}

impl HealthReport {
    pub fn compute(
        weight_kg: f64,
        height_cm: f64,
        age_years: f64,
        gender: Gender,
        activity: ActivityLevel,
    ) -> Result<Self> {
        let bmi = bmi(weight_kg, height_cm)?;
        let bmr = bmr(weight_kg, height_cm, age_years, gender)?;
        let report = Self {
            bmi,
            bmr,
            active_bmr: bmr * activity.factor(),
            bfp: bfp(bmi, age_years, gender)?,
            ideal_weight_kg: ideal_weight(height_cm)?,
            classification: classify_malnutrition(bmi),
            obese: bmi >= OBESITY_BMI,
            activity_level: activity,
        };
        report.check()?;
        Ok(report)
    }

    /// Verifies the report's own invariants.
    pub fn check(&self) -> Result<()> {
        let finite = [self.bmi, self.bmr, self.active_bmr, self.bfp, self.ideal_weight_kg]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.bmi <= 0.0 || self.ideal_weight_kg <= 0.0 {
            return Err(Error::Numeric(format!("health report out of range: {self:?}")));
        }
        if self.bmr <= 0.0 {
            return Err(Error::param(format!(
                "non-physiological inputs give BMR {:.2} kcal/day",
                self.bmr
            )));
        }
        if classify_malnutrition(self.bmi) != self.classification {
            return Err(Error::Numeric("classification disagrees with BMI".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NutritionPlan {
    pub diet_type: DietType,
    pub macro_split: MacroSplit,
    pub weeks: u32,
    pub activity_level: ActivityLevel,
    pub daily_calorie_target: f64,
    /// Weight at the start of each week, then the goal: `weeks + 1` entries.
    pub trajectory_kg: Vec<f64>,
}

/// Linear plan from `current_weight_kg` to the report's ideal weight.
///
/// The report's `active_bmr` is rescaled to `activity` before the energy
/// balance is applied.
pub fn nutrition_plan(
    report: &HealthReport,
    current_weight_kg: f64,
    diet_type: DietType,
    weeks: i64,
    activity: ActivityLevel,
) -> Result<NutritionPlan> {
    if weeks < 1 {
        return Err(Error::param(format!("weeks must be at least 1, got {weeks}")));
    }
    let weeks = u32::try_from(weeks).map_err(|_| Error::param("weeks out of range"))?;
    positive("current weight", current_weight_kg)?;
    let active_bmr = report.bmr * activity.factor();
    let ideal = report.ideal_weight_kg;
    let delta = ideal - current_weight_kg;
    let target = active_bmr + delta * KCAL_PER_KG / (weeks as f64 * 7.0);
    if target < MIN_DAILY_KCAL {
        let headroom = active_bmr - MIN_DAILY_KCAL;
        let min_weeks = (headroom > 0.0)
            .then(|| (-delta * KCAL_PER_KG / (7.0 * headroom)).ceil().max(1.0) as u32);
        return Err(Error::Infeasible {
            message: format!(
                "{weeks} weeks needs {target:.0} kcal/day, below the {MIN_DAILY_KCAL:.0} kcal/day floor"
            ),
            min_weeks,
        });
    }
    let mut trajectory: Vec<f64> = (0..=weeks)
        .map(|k| current_weight_kg + delta * k as f64 / weeks as f64)
        .collect();
    trajectory[weeks as usize] = ideal;
    Ok(NutritionPlan {
        diet_type,
        macro_split: diet_type.macro_split(),
        weeks,
        activity_level: activity,
        daily_calorie_target: target,
        trajectory_kg: trajectory,
    })
}
