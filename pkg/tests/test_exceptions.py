from relevance_grpo.exceptions import ShortfallError, ValidationError


class TestValidationError:
    def test_str_details_to_string(self):
        assert ValidationError('abc').details == 'abc'
        assert str(ValidationError('abc')) == 'abc'

    def test_list_details_to_string(self):
        assert ValidationError(['a', 'b']).details == ['a', 'b']
        assert str(ValidationError(['a', 'b'])) == "a; b"

    def test_dict_details_to_string(self):
        assert str(
            ValidationError(
                {
                    'epsilon': 'A sad error',
                    'beta': 'A number was expected',
                }
            )
        ) == (
            "epsilon: A sad error.\n"
            "beta: A number was expected."
        )

    def test_dict_with_list_details_to_string(self):
        assert str(
            ValidationError(
                {
                    'epsilon': ['A sad error', 'A shocking error'],
                    'beta': 'A number was expected',
                }
            )
        ) == (
            "epsilon: A sad error; A shocking error.\n"
            "beta: A number was expected."
        )

    def test_prepend_source(self):
        error = ValidationError('bad value')
        error.prepend_source('EPSILON')
        error.prepend_source('GRPO')
        assert str(error) == 'GRPO.EPSILON: bad value'

    def test_field_messages_flattens_nested_details(self):
        error = ValidationError(
            {'GRPO': [{'EPSILON': ['outside (0, 1)']}], 'SEED': 'not an int'}
        )
        assert error.field_messages() == [
            'GRPO.EPSILON: outside (0, 1)',
            'SEED: not an int',
        ]

    def test_field_messages_with_sources(self):
        error = ValidationError({'CORPUS': 'required by build-dataset'})
        error.prepend_source('DATASET')
        assert error.field_messages() == ['DATASET.CORPUS: required by build-dataset']

    def test_field_messages_plain_string(self):
        assert ValidationError('broken').field_messages() == ['broken']


def test_shortfall_error_lists_deficits():
    error = ShortfallError({2: 10, 0: 3})
    assert error.deficits == {0: 3, 2: 10}
    assert str(error) == (
        'Insufficient samples for a balanced split '
        '(class 0: short by 3, class 2: short by 10)'
    )
