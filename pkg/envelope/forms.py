"""
Validation of merged run options (settings defaults, --config file, flags)
for the management commands.
"""
from django import forms

from .exceptions import ConfigError
from .models import (
    CovRegPrior,
    FitConfig,
    McmcSchedule,
    OptimizerConfig,
    PriorConfig,
    SimConfig,
)

CONTRAST_HINT = 'expected --contrast "xa_1,...,xa_q;xb_1,...,xb_q"'
POINT_HINT = 'expected --at "label=x_1,...,x_q"'


def parse_vector(text, what):
    try:
        return [float(v) for v in str(text).split(',')]
    except ValueError:
        raise forms.ValidationError(f"{what}: {text!r} is not a comma-separated list of numbers")


def parse_int_list(text, what):
    try:
        values = [int(v) for v in str(text).split(',')]
    except ValueError:
        raise forms.ValidationError(f"{what}: {text!r} is not a comma-separated list of integers")
    return values


def error_message(form):
    """Flatten form errors into one line for the command-line user."""
    parts = []
    for field, errors in form.errors.items():
        label = 'config' if field == '__all__' else field
        parts.extend(f"{label}: {error}" for error in errors)
    return '; '.join(parts)


class SimulationFieldsForm(forms.Form):
    """Dimensions and scales of the generating model"""
    n = forms.IntegerField(min_value=1)
    p = forms.IntegerField(min_value=1)
    s = forms.IntegerField(min_value=1)
    q = forms.IntegerField(min_value=1)
    tau = forms.FloatField(min_value=0)
    sigma2 = forms.FloatField()
    seed = forms.IntegerField(min_value=0)

    def clean_sigma2(self):
        sigma2 = self.cleaned_data.get('sigma2')
        if sigma2 is not None and sigma2 <= 0:
            raise forms.ValidationError('sigma2 must be positive')
        return sigma2

    def clean(self):
        cleaned_data = super().clean()
        p, s = cleaned_data.get('p'), cleaned_data.get('s')
        if p is not None and s is not None and s >= p:
            raise forms.ValidationError('s must be < p')
        return cleaned_data

    def simulation_config(self, **overrides):
        data = self.cleaned_data
        values = dict(
            n=data['n'], p=data['p'], s=data['s'], q=data['q'],
            tau=data['tau'], sigma2=data['sigma2'], seed=data['seed'],
        )
        values.update(overrides)
        return SimConfig(**values)


class SimulateForm(SimulationFieldsForm):
    K = forms.IntegerField(min_value=0, required=False)

    def simulation_config(self, **overrides):
        overrides.setdefault('K', self.cleaned_data.get('K'))
        return super().simulation_config(**overrides)


class FitForm(forms.Form):
    """EM loop, MCMC budget, optimizer and prior settings"""
    s = forms.IntegerField(min_value=0)
    K = forms.IntegerField(min_value=0)
    em_max_iters = forms.IntegerField(min_value=0)
    em_tol = forms.FloatField()
    objective = forms.ChoiceField(choices=[(c, c) for c in FitConfig.OBJECTIVE_CHOICES])
    seed = forms.IntegerField(min_value=0)
    threads = forms.IntegerField(min_value=1)

    n_iter = forms.IntegerField(min_value=1)
    burn = forms.IntegerField(min_value=0)
    thin = forms.IntegerField(min_value=1)
    chains = forms.IntegerField(min_value=1)
    warm_n_iter = forms.IntegerField(min_value=1)
    warm_burn = forms.IntegerField(min_value=0)

    max_iters = forms.IntegerField(min_value=1)
    grad_tol = forms.FloatField()
    step_init = forms.FloatField()
    armijo_c = forms.FloatField()
    backtrack_factor = forms.FloatField()
    nonmonotone_window = forms.IntegerField(min_value=0)
    rel_tol = forms.FloatField(min_value=0)

    U0 = forms.FloatField()
    nu0 = forms.FloatField()
    U1 = forms.FloatField()
    nu1 = forms.FloatField()
    Lambda0 = forms.FloatField(min_value=0)
    alpha = forms.FloatField()
    kappa = forms.FloatField()

    tau_eta2 = forms.FloatField()
    tau_B2 = forms.FloatField()

    def clean(self):
        cleaned_data = super().clean()
        if self.errors:
            return cleaned_data
        try:
            self.fit_config()
        except ConfigError as e:
            raise forms.ValidationError(str(e))
        return cleaned_data

    def fit_config(self, **overrides):
        data = self.cleaned_data
        values = dict(
            s=data['s'],
            K=data['K'],
            em_max_iters=data['em_max_iters'],
            em_tol=data['em_tol'],
            mcmc=McmcSchedule(
                n_iter=data['n_iter'], burn=data['burn'], thin=data['thin'], chains=data['chains'],
                warm_n_iter=data['warm_n_iter'], warm_burn=data['warm_burn'],
            ),
            optimizer=OptimizerConfig(
                max_iters=data['max_iters'], grad_tol=data['grad_tol'], step_init=data['step_init'],
                armijo_c=data['armijo_c'], backtrack_factor=data['backtrack_factor'],
                nonmonotone_window=data['nonmonotone_window'], rel_tol=data['rel_tol'],
            ),
            priors=PriorConfig(
                U0=data['U0'], nu0=data['nu0'], U1=data['U1'], nu1=data['nu1'],
                Lambda0=data['Lambda0'], alpha=data['alpha'], kappa=data['kappa'],
            ),
            covreg=CovRegPrior(tau_eta2=data['tau_eta2'], tau_B2=data['tau_B2']),
            objective=data['objective'],
            seed=data['seed'],
            threads=data['threads'],
        )
        values.update(overrides)
        return FitConfig(**values)


class LabelledPointsField(forms.Field):
    """Repeated "label=x_1,...,x_q" options"""

    def to_python(self, value):
        if not value:
            return []
        points = []
        for item in value:
            label, sep, numbers = str(item).partition('=')
            if not sep or not label.strip():
                raise forms.ValidationError(f"{item!r}: {POINT_HINT}")
            points.append((label.strip(), parse_vector(numbers, label.strip())))
        return points


class SummarizeForm(forms.Form):
    """Contrast, evaluation points and table sizes for the posterior summaries"""
    contrast = forms.CharField()
    at = LabelledPointsField(required=False)
    dims = forms.CharField()
    top_m = forms.IntegerField(min_value=1)

    def clean_contrast(self):
        text = self.cleaned_data['contrast']
        halves = text.split(';')
        if len(halves) != 2:
            raise forms.ValidationError(f"{text!r}: {CONTRAST_HINT}")
        try:
            x_a, x_b = (parse_vector(half, 'contrast') for half in halves)
        except forms.ValidationError:
            raise forms.ValidationError(f"{text!r}: {CONTRAST_HINT}")
        if len(x_a) != len(x_b):
            raise forms.ValidationError(f"contrast vectors differ in length; {CONTRAST_HINT}")
        return x_a, x_b

    def clean_dims(self):
        dims = parse_int_list(self.cleaned_data['dims'], 'dims')
        if len(dims) != 2 or dims[0] == dims[1] or min(dims) < 0:
            raise forms.ValidationError('dims must be two distinct nonnegative column indices, e.g. "0,1"')
        return tuple(dims)


class EvalForm(SimulationFieldsForm, FitForm):
    """Experiment selection plus the generating model and the fit settings"""
    EXPERIMENTS = ('misspecification', 'two_stage', 'losses')

    experiment = forms.ChoiceField(choices=[(e, e) for e in EXPERIMENTS])
    s_tilde = forms.CharField(required=False)
    q_list = forms.CharField(required=False)
    replicates = forms.IntegerField(min_value=1)
    bootstrap_resamples = forms.IntegerField(min_value=1)
    allow_full = forms.BooleanField(required=False)

    def clean_s_tilde(self):
        text = self.cleaned_data.get('s_tilde')
        return parse_int_list(text, 's_tilde') if text else []

    def clean_q_list(self):
        text = self.cleaned_data.get('q_list')
        return parse_int_list(text, 'q_list') if text else []

    def clean(self):
        cleaned_data = super().clean()
        experiment = cleaned_data.get('experiment')
        if experiment == 'misspecification' and not cleaned_data.get('s_tilde'):
            raise forms.ValidationError('the misspecification experiment needs --s-tilde')
        if experiment == 'two_stage' and not cleaned_data.get('q_list'):
            raise forms.ValidationError('the two-stage experiment needs --q-list')
        return cleaned_data
