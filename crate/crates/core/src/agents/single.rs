//! The single-agent baseline: one call from answers to script.

use super::{render_dialogue, AgentContext, AgentError, ChatTurn};
use crate::llm::{Schema, SchemaType};
use crate::params::Field;
use crate::rulebook::Phase;

fn parameter_list() -> String {
    Field::ALL
        .iter()
        .map(|f| format!("- {}: {:?}", f.name(), f.kind()).to_lowercase())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Writes a complete reconstruction script from the question/answer turns.
pub fn single_agent_script(ctx: &AgentContext<'_>, turns: &[ChatTurn], data_directory: &str) -> Result<String, AgentError> {
    let conversation = render_dialogue(turns);
    let settings = format!("data_directory = \"{data_directory}\"");
    let rules = ctx.rules.describe(Phase::Initial);
    let parameters = parameter_list();
    let template = ctx.kb.script_template()?;
    let slots = [
        ("conversation", conversation.as_str()),
        ("settings", settings.as_str()),
        ("rules", rules.as_str()),
        ("parameters", parameters.as_str()),
        ("template", template.as_str()),
    ];
    let schema = Schema::new("single_agent").required("script", SchemaType::Text);
    let s = ctx.structured("single_agent", &slots, &schema)?;
    Ok(s.value["script"].as_str().unwrap_or_default().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::collect::tests::CASE_ANSWERS;
    use crate::agents::questions::CANONICAL;
    use crate::executor::template::render_script;
    use crate::params::parse_params;

    #[test]
    fn faithful_model_writes_the_case_script() {
        let f = crate::agents::testing::Fixture::reference();
        let turns: Vec<ChatTurn> = CANONICAL
            .iter()
            .zip(CASE_ANSWERS)
            .flat_map(|((_, q), a)| [ChatTurn::pear(*q), ChatTurn::user(a)])
            .collect();
        let want = parse_params(include_str!("../../tests/fixtures/recon_1.json")).unwrap();
        let script = single_agent_script(&f.ctx(), &turns, &want.data_directory).unwrap();
        assert_eq!(script, render_script(&want, &f.kb.script_template().unwrap()).unwrap());
    }
}
