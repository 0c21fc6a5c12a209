from setuptools import setup

setup(
    name='Subseasonal-Forecast',
    version='0.1.0',
    packages=['subseasonal_forecast'],
    scripts=['bin/subseasonal-forecast.py'],
    license='MIT',
    description='Machine-learning post-processing of subseasonal ensemble '
                'forecasts.',
    long_description=open('README.rst').read(),
    install_requires=['numpy', 'scipy', 'joblib'],
    test_suite='tests',
)
